//! Run configuration files.
//!
//! Matrices are written row-major as arrays of rows, or as
//! `{"csv": "relative/path.csv"}` pointing at a comma-separated sidecar file
//! next to the config.

use std::fs;
use std::path::{Path, PathBuf};

use qattractor::{LtiSystem, Matrix, Measure, QuantizerSpec, Vector};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureName {
    Logdet,
    Trace,
}

impl From<MeasureName> for Measure {
    fn from(m: MeasureName) -> Self {
        match m {
            MeasureName::Logdet => Measure::NegLogDet,
            MeasureName::Trace => Measure::TraceInverse,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub tau_grid: Option<usize>,
    /// Start from the LQR gain (Q = I, R = I) instead of `gain`.
    #[serde(default)]
    pub lqr_start: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleStates {
    pub count: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub step: Option<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    pub circle: Option<CircleStates>,
    pub chatter_window: Option<usize>,
    pub chatter_threshold: Option<f64>,
    pub record_every: Option<usize>,
    /// Certify the gain first and report entry into the attractor.
    #[serde(default = "yes")]
    pub certify: bool,
    /// Also run the synthesis and simulate the designed gain.
    #[serde(default)]
    pub with_designed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub count: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub name: Option<String>,
    pub plant: PlantConfig,
    pub quantizer: QuantizerConfig,
    pub gain: Option<MatrixSpec>,
    pub measure: Option<MeasureName>,
    pub tau_grid: Option<usize>,
    pub synthesis: Option<SynthesisSection>,
    pub simulation: Option<SimulationSection>,
    pub baseline: Option<BaselineSection>,
}

/// A parsed and dimension-checked configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub system: LtiSystem,
    pub spec: QuantizerSpec,
    pub gain: Option<Matrix>,
    pub measure: Measure,
    pub tau_grid: usize,
    pub synthesis: SynthesisSection,
    pub simulation: Option<SimulationSection>,
    pub baseline: BaselineSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        let raw: RawConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_raw(raw, base)
    }

    pub fn from_raw(raw: RawConfig, base: &Path) -> Result<Self, CliError> {
        let a = load_matrix(&raw.plant.a, base, "plant.a")?;
        let b = load_matrix(&raw.plant.b, base, "plant.b")?;
        let system = LtiSystem::new(a, b).map_err(CliError::from)?;
        let spec = QuantizerSpec::new(raw.quantizer.delta).map_err(CliError::from)?;
        if spec.dim() != system.n() {
            return Err(CliError::validation(format!(
                "quantizer.delta has {} entries, plant has {} states",
                spec.dim(),
                system.n()
            )));
        }
        let gain = raw
            .gain
            .as_ref()
            .map(|g| load_matrix(g, base, "gain"))
            .transpose()?;
        if let Some(k) = &gain {
            system.check_gain(k).map_err(CliError::from)?;
        }
        let tau_grid = raw.tau_grid.unwrap_or(20);
        if tau_grid == 0 {
            return Err(CliError::validation("tau_grid must be at least 1"));
        }
        if let Some(sim) = &raw.simulation {
            for (i, x) in sim.initial_states.iter().enumerate() {
                if x.len() != system.n() {
                    return Err(CliError::validation(format!(
                        "simulation.initial_states[{i}] has {} entries, plant has {} states",
                        x.len(),
                        system.n()
                    )));
                }
            }
        }
        Ok(Self {
            name: raw.name.unwrap_or_else(|| "run".into()),
            system,
            spec,
            gain,
            measure: raw.measure.unwrap_or(MeasureName::Logdet).into(),
            tau_grid,
            synthesis: raw.synthesis.unwrap_or(SynthesisSection {
                tolerance: None,
                max_iterations: None,
                tau_grid: None,
                lqr_start: false,
            }),
            simulation: raw.simulation,
            baseline: raw.baseline.unwrap_or(BaselineSection {
                count: None,
                seed: None,
            }),
        })
    }

    pub fn require_gain(&self) -> Result<&Matrix, CliError> {
        self.gain
            .as_ref()
            .ok_or_else(|| CliError::validation("this workflow needs `gain` in the config"))
    }

    /// Initial states from the explicit list followed by the circle.
    pub fn initial_states(&self) -> Vec<Vector> {
        let n = self.system.n();
        let Some(sim) = &self.simulation else {
            return Vec::new();
        };
        let mut out: Vec<Vector> = sim
            .initial_states
            .iter()
            .map(|x| Vector::from_column_slice(x))
            .collect();
        if let Some(c) = &sim.circle {
            out.extend(qattractor::sim::circle_states(c.count, c.radius, n));
        }
        out
    }
}

fn load_matrix(spec: &MatrixSpec, base: &Path, what: &str) -> Result<Matrix, CliError> {
    let rows = match spec {
        MatrixSpec::Rows(rows) => rows.clone(),
        MatrixSpec::Csv { csv } => read_csv_rows(&base.join(csv), what)?,
    };
    rows_to_matrix(&rows, what)
}

fn read_csv_rows(path: &Path, what: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("{what}: cannot read {}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|e| {
                        CliError::validation(format!(
                            "{what}: {} row {}: `{}`: {e}",
                            path.display(),
                            i + 1,
                            cell.trim()
                        ))
                    })
                })
                .collect()
        })
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(CliError::validation(format!("{what} is empty")));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(CliError::validation(format!(
            "{what}: row {} has {} entries, expected {c}",
            i + 1,
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::validation(format!("{what} has non-finite entries")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
