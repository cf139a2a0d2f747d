//! Batch workflows behind the `qattractor` binary.
//!
//! Each workflow reads a [`RunConfig`], validates every dimension before any
//! solve, writes JSON and CSV artifacts into an output directory and returns
//! a report for programmatic use.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qattractor::analysis::{
    analyze, baseline_liberzon, ellipsoid_metrics, random_weight, AnalysisOptions,
    AnalysisResult, CertificateCheck, Ellipsoid,
};
use qattractor::sim::{batch_portrait, Portrait, SimConfig};
use qattractor::synthesis::{improvement_report, synthesize, InitialGain, SynthesisOutcome};
use qattractor::{Error, ExecMode, Matrix, SynthesisConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub use config::RunConfig;
use config::matrix_rows;

/// A failure with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    code: i32,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: "validation",
            message: message.into(),
            code: 2,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            kind: "internal",
            message: message.into(),
            code: 4,
        }
    }

    /// 2 validation, 3 infeasible or solver failure, 4 internal.
    pub fn exit_code(&self) -> i32 {
        self.code
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind, "message": self.message, "exit_code": self.code })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Dimension(_)
            | Error::NotSquare { .. }
            | Error::NotSymmetric { .. }
            | Error::NotPositiveDefinite(_)
            | Error::InvalidInput(_)
            | Error::UndeclaredVariable(_) => ("validation", 2),
            Error::UnstabilizedLoop { .. } => ("unstabilized_loop", 3),
            Error::NoStabilizingSolution(_) => ("not_stabilizable", 3),
            Error::Infeasible(_) => ("infeasible", 3),
            Error::Solver(_) => ("solver", 3),
            Error::EigenNonConvergence(_) | Error::Singular(_) => ("internal", 4),
        };
        Self {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tau_grid: Option<usize>,
    pub tol: Option<f64>,
}

impl Overrides {
    fn validate(&self) -> Result<(), CliError> {
        if self.tau_grid == Some(0) {
            return Err(CliError::validation("--tau-grid must be at least 1"));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::validation(format!("--tol must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_SYNTHESIS_GRID: usize = 15;
pub const DEFAULT_BASELINE_COUNT: usize = 100;

fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn write_json(out: &Path, name: &str, v: &Value) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::internal(e.to_string()))?;
    write(out, name, &(text + "\n"))
}

fn certificate_json(c: &CertificateCheck) -> Value {
    json!({
        "lmi_lambda_max": c.lmi_lambda_max,
        "sector_residual": c.sector_residual,
        "p_lambda_min": c.p_lambda_min,
        "ok": c.ok,
    })
}

fn ellipsoid_json(e: &Ellipsoid) -> Value {
    let m = ellipsoid_metrics(e);
    json!({
        "P": matrix_rows(e.shape().as_matrix()),
        "semiaxes": m.semiaxes,
        "directions": matrix_rows(&m.directions),
        "volume_proxy": m.volume_proxy,
        "trace_inverse": m.trace_inverse,
        "logdet": m.logdet,
    })
}

fn analysis_options(cfg: &RunConfig, ov: &Overrides) -> AnalysisOptions {
    AnalysisOptions {
        grid_size: ov.tau_grid.unwrap_or(cfg.tau_grid),
        ..AnalysisOptions::with_measure(cfg.measure)
    }
}

pub struct AnalyzeReport {
    pub result: AnalysisResult,
    pub files: Vec<PathBuf>,
}

/// Certifies the configured gain. Artifacts: `analysis.json`,
/// `tau_sweep.csv`.
pub fn run_analyze(cfg: &RunConfig, ov: &Overrides, out: &Path) -> Result<AnalyzeReport, CliError> {
    ov.validate()?;
    let k = cfg.require_gain()?;
    let result = analyze(&cfg.system, k, &cfg.spec, &analysis_options(cfg, ov))?;
    let doc = json!({
        "name": cfg.name,
        "workflow": "analyze",
        "measure": result.measure.as_str(),
        "gain": matrix_rows(k),
        "tau": result.tau,
        "objective": result.objective,
        "ellipsoid": ellipsoid_json(&result.ellipsoid),
        "S1": result.multipliers.s1().as_slice(),
        "S2": result.multipliers.s2().as_slice(),
        "certificate": certificate_json(&result.certificate),
    });
    let mut sweep = String::from("tau,status,objective\n");
    for s in &result.per_tau {
        let _ = writeln!(sweep, "{:e},{:?},{:e}", s.tau, s.status, s.objective);
    }
    let files = vec![
        write_json(out, "analysis.json", &doc)?,
        write(out, "tau_sweep.csv", &sweep)?,
    ];
    Ok(AnalyzeReport { result, files })
}

fn synthesis_config(cfg: &RunConfig, ov: &Overrides) -> SynthesisConfig {
    let s = &cfg.synthesis;
    let mut sc = SynthesisConfig {
        measure: cfg.measure,
        ..SynthesisConfig::default()
    };
    sc.initial_gain = match (&cfg.gain, s.lqr_start) {
        (Some(k), false) => InitialGain::Given(k.clone()),
        _ => InitialGain::Lqr,
    };
    if let Some(t) = ov.tol.or(s.tolerance) {
        sc.tolerance = t;
    }
    if let Some(m) = s.max_iterations {
        sc.max_iterations = m;
    }
    sc.tau_grid_size = ov.tau_grid.or(s.tau_grid).unwrap_or(DEFAULT_SYNTHESIS_GRID);
    sc
}

pub struct SynthesizeReport {
    pub outcome: SynthesisOutcome,
    /// Analysis of the initial gain with the same measure and grid size,
    /// when the run started from a given gain.
    pub baseline: Option<AnalysisResult>,
    /// 100·(1 − after/before) in the chosen measure.
    pub improvement_percent: Option<f64>,
    pub files: Vec<PathBuf>,
}

/// Designs a gain. Artifacts: `synthesis.json`, `trace.csv`.
pub fn run_synthesize(cfg: &RunConfig, ov: &Overrides, out: &Path) -> Result<SynthesizeReport, CliError> {
    ov.validate()?;
    let sc = synthesis_config(cfg, ov);
    let outcome = synthesize(&cfg.system, &cfg.spec, &sc)?;
    let (baseline, improvement_percent) = match &sc.initial_gain {
        InitialGain::Given(k) => {
            let opts = AnalysisOptions {
                grid_size: sc.tau_grid_size,
                ..AnalysisOptions::with_measure(sc.measure)
            };
            let before = analyze(&cfg.system, k, &cfg.spec, &opts)?;
            let pct = improvement_report(&before, &outcome)?;
            (Some(before), Some(pct))
        }
        InitialGain::Lqr => (None, None),
    };
    let doc = json!({
        "name": cfg.name,
        "workflow": "synthesize",
        "measure": outcome.measure.as_str(),
        "initial_gain": matrix_rows(&outcome.initial_gain),
        "gain": matrix_rows(&outcome.gain),
        "tau": outcome.tau,
        "objective": outcome.objective,
        "iterations": outcome.iterations(),
        "stop": format!("{:?}", outcome.stop),
        "relative_decrease": outcome.relative_decrease(),
        "ellipsoid": ellipsoid_json(&outcome.ellipsoid),
        "S1": outcome.multipliers.s1().as_slice(),
        "S2": outcome.multipliers.s2().as_slice(),
        "certificate": certificate_json(&outcome.certificate),
        "improvement": baseline.as_ref().map(|b| json!({
            "initial_objective": b.objective,
            "initial_tau": b.tau,
            "final_objective": outcome.objective,
            "percent": improvement_percent,
        })),
    });
    let files = vec![
        write_json(out, "synthesis.json", &doc)?,
        write(out, "trace.csv", &outcome.trace.to_csv())?,
    ];
    Ok(SynthesizeReport {
        outcome,
        baseline,
        improvement_percent,
        files,
    })
}

pub struct SimulateReport {
    pub certificate: Option<Ellipsoid>,
    pub portrait: Portrait,
    /// Designed gain, its certified ellipsoid and trajectories, when asked.
    pub designed: Option<(Matrix, Ellipsoid, Portrait)>,
    pub files: Vec<PathBuf>,
}

fn sim_template(cfg: &RunConfig) -> Result<SimConfig, CliError> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::validation("this workflow needs a `simulation` section"))?;
    let mut t = SimConfig::new(qattractor::Vector::zeros(cfg.system.n()), sim.horizon);
    if let Some(h) = sim.step {
        t.step = h;
    }
    if let Some(w) = sim.chatter_window {
        t.chatter_window = w;
    }
    if let Some(th) = sim.chatter_threshold {
        t.chatter_threshold = th;
    }
    if let Some(r) = sim.record_every {
        t.record_every = r;
    }
    Ok(t)
}

/// Simulates the configured gain from every initial state. Artifacts:
/// `portrait_summary.csv`, `trajectories.csv`, and the `designed_*`
/// counterparts when the designed gain is requested.
pub fn run_simulate(cfg: &RunConfig, ov: &Overrides, out: &Path) -> Result<SimulateReport, CliError> {
    ov.validate()?;
    let k = cfg.require_gain()?;
    let template = sim_template(cfg)?;
    let sim = cfg.simulation.as_ref().expect("checked by sim_template");
    let states = cfg.initial_states();
    if states.is_empty() {
        return Err(CliError::validation(
            "simulation needs `initial_states` or a `circle`",
        ));
    }
    // Probe the template once so that bad settings fail as a whole run
    // rather than as per-row errors.
    let probe = SimConfig {
        x0: states[0].clone(),
        horizon: template.step,
        ..template.clone()
    };
    qattractor::sim::simulate(&cfg.system, k, &cfg.spec, &probe, None)?;

    let certificate = if sim.certify {
        Some(run_analyze(cfg, ov, out)?.result.ellipsoid)
    } else {
        None
    };
    let portrait = batch_portrait(
        &cfg.system,
        k,
        &cfg.spec,
        &states,
        &template,
        certificate.as_ref(),
        ExecMode::default(),
    );
    let mut files = vec![
        write(out, "portrait_summary.csv", &portrait.summary_csv())?,
        write(out, "trajectories.csv", &portrait.trajectories_csv())?,
    ];
    let designed = if sim.with_designed {
        let rep = run_synthesize(cfg, ov, out)?;
        files.extend(rep.files);
        let kd = rep.outcome.gain.clone();
        let e = rep.outcome.ellipsoid.clone();
        let p = batch_portrait(
            &cfg.system,
            &kd,
            &cfg.spec,
            &states,
            &template,
            Some(&e),
            ExecMode::default(),
        );
        files.push(write(out, "designed_portrait_summary.csv", &p.summary_csv())?);
        files.push(write(out, "designed_trajectories.csv", &p.trajectories_csv())?);
        Some((kd, e, p))
    } else {
        None
    };
    Ok(SimulateReport {
        certificate,
        portrait,
        designed,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub index: usize,
    pub baseline_volume: f64,
    pub optimized_volume: f64,
    pub baseline_largest_semiaxis: f64,
    /// The optimized ellipsoid lies inside the baseline one.
    pub contained: bool,
}

impl BaselineRow {
    pub fn optimized_smallest(&self) -> bool {
        self.optimized_volume < self.baseline_volume
    }
}

pub struct BaselineReport {
    pub optimized: AnalysisResult,
    pub rows: Vec<BaselineRow>,
    pub files: Vec<PathBuf>,
}

/// Compares the certified attractor with Lyapunov-equation attractors for
/// seeded random weights Q. Artifacts: `analysis.json`, `tau_sweep.csv`,
/// `baseline.csv`, `baseline_summary.json`.
pub fn run_compare_baseline(cfg: &RunConfig, ov: &Overrides, out: &Path) -> Result<BaselineReport, CliError> {
    ov.validate()?;
    let k = cfg.require_gain()?;
    if cfg.spec.uniform_step().is_none() {
        return Err(CliError::validation(
            "the Lyapunov baseline needs equal quantization steps on every axis",
        ));
    }
    let count = cfg.baseline.count.unwrap_or(DEFAULT_BASELINE_COUNT);
    let seed = ov.seed.or(cfg.baseline.seed).unwrap_or(0);
    let rep = run_analyze(cfg, ov, out)?;
    let opt_metrics = ellipsoid_metrics(&rep.result.ellipsoid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    for index in 0..count {
        let q = random_weight(cfg.system.n(), &mut rng);
        let e = baseline_liberzon(&cfg.system, k, &cfg.spec, &q)?;
        let m = ellipsoid_metrics(&e);
        rows.push(BaselineRow {
            index,
            baseline_volume: m.volume_proxy,
            optimized_volume: opt_metrics.volume_proxy,
            baseline_largest_semiaxis: m.largest_semiaxis(),
            contained: rep.result.ellipsoid.is_inside(&e, 1e-9),
        });
    }
    let mut csv = String::from(
        "index,baseline_volume,optimized_volume,volume_ratio,baseline_largest_semiaxis,optimized_smallest,contained\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{:e},{:e},{},{}",
            r.index,
            r.baseline_volume,
            r.optimized_volume,
            r.optimized_volume / r.baseline_volume,
            r.baseline_largest_semiaxis,
            r.optimized_smallest(),
            r.contained
        );
    }
    let smallest = rows.iter().filter(|r| r.optimized_smallest()).count();
    let contained = rows.iter().filter(|r| r.contained).count();
    let summary = json!({
        "name": cfg.name,
        "workflow": "compare-baseline",
        "seed": seed,
        "rows": count,
        "optimized_volume": opt_metrics.volume_proxy,
        "optimized_smallest": smallest,
        "contained": contained,
    });
    let mut files = rep.files;
    files.push(write(out, "baseline.csv", &csv)?);
    files.push(write_json(out, "baseline_summary.json", &summary)?);
    Ok(BaselineReport {
        optimized: rep.result,
        rows,
        files,
    })
}
