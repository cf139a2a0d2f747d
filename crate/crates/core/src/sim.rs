//! Fixed-step simulation of ẋ = Ax + BK·q(x).
//!
//! The right-hand side is discontinuous on the quantization grid, so a
//! trajectory that reaches a Krasovskii equilibrium chatters around it
//! instead of stopping. When the state stays within a threshold of a
//! verified equilibrium for a window of consecutive steps, the state is
//! frozen there and the lock is reported. This is a surrogate for sliding
//! motion, not a set-valued solver.

use std::fmt::Write as _;

use crate::analysis::Ellipsoid;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::linalg::{Matrix, Vector};
use crate::quantizer::{is_krasovskii_equilibrium, quantize, quantize_unchecked, QuantizerSpec};
use crate::system::LtiSystem;

/// States beyond this norm abort the run.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub x0: Vector,
    /// Consecutive steps near the same equilibrium before locking.
    pub chatter_window: usize,
    /// Distance to a candidate equilibrium that counts as "near".
    pub chatter_threshold: f64,
    /// Keep every k-th sample in the trajectory (the first and last are
    /// always kept). Entry and invariance are evaluated on every step.
    pub record_every: usize,
}

impl SimConfig {
    pub fn new(x0: Vector, horizon: f64) -> Self {
        Self {
            step: 1e-3,
            horizon,
            x0,
            chatter_window: 20,
            chatter_threshold: 1e-2,
            record_every: 1,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidInput(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.chatter_window < 2 {
            return Err(Error::InvalidInput("chatter window must be at least 2 steps".into()));
        }
        if !(self.chatter_threshold >= 0.0) || self.record_every == 0 {
            return Err(Error::InvalidInput(
                "chatter threshold must be nonnegative and record_every positive".into(),
            ));
        }
        if self.x0.len() != n || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "initial state must have {n} finite entries"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFlag {
    Free,
    /// Within the threshold of a verified equilibrium, not yet locked.
    Chattering,
    Locked,
}

impl SampleFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleFlag::Free => "",
            SampleFlag::Chattering => "chatter",
            SampleFlag::Locked => "locked",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimStatus {
    Completed,
    /// ‖x‖ exceeded [`DIVERGENCE_NORM`] at `time`.
    Diverged { time: f64, norm: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumLock {
    pub time: f64,
    pub point: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub quantized: Vec<Vector>,
    /// V(x) = xᵀPx when a certificate was supplied.
    pub values: Option<Vec<f64>>,
    pub flags: Vec<SampleFlag>,
    /// First time with V ≤ 1.
    pub entry_time: Option<f64>,
    /// Largest V over all steps after entry.
    pub max_value_after_entry: Option<f64>,
    pub lock: Option<EquilibriumLock>,
    pub status: SimStatus,
}

impl Trajectory {
    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has samples")
    }

    /// Columns t, x_1..x_n, q_1..q_n, [V], flag.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        write_header(&mut out, self.states[0].len(), self.values.is_some(), false);
        self.write_rows(&mut out, None);
        out
    }

    fn write_rows(&self, out: &mut String, label: Option<usize>) {
        for i in 0..self.times.len() {
            if let Some(l) = label {
                let _ = write!(out, "{l},");
            }
            let _ = write!(out, "{:e}", self.times[i]);
            for v in self.states[i].iter().chain(self.quantized[i].iter()) {
                let _ = write!(out, ",{v:e}");
            }
            if let Some(vals) = &self.values {
                let _ = write!(out, ",{:e}", vals[i]);
            }
            let _ = writeln!(out, ",{}", self.flags[i].as_str());
        }
    }
}

fn write_header(out: &mut String, n: usize, with_v: bool, with_label: bool) {
    if with_label {
        out.push_str("trajectory,");
    }
    out.push('t');
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",q_{i}");
    }
    if with_v {
        out.push_str(",V");
    }
    out.push_str(",flag\n");
}

fn rhs(a: &Matrix, bk: &Matrix, spec: &QuantizerSpec, x: &Vector) -> Vector {
    a * x + bk * quantize_unchecked(x, spec)
}

/// Snaps coordinates that sit within `thr` of a nonzero grid point.
fn snap(x: &Vector, spec: &QuantizerSpec, thr: f64) -> Vector {
    Vector::from_iterator(
        x.len(),
        x.iter().zip(spec.delta().iter()).map(|(&xi, &d)| {
            let k = (xi / d).round();
            if k != 0.0 && (xi - k * d).abs() <= thr {
                k * d
            } else {
                xi
            }
        }),
    )
}

fn equilibrium_tol(x: &Vector) -> f64 {
    1e-9 * (1.0 + x.amax())
}

/// RK4 with q evaluated at every stage.
pub fn simulate(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    cfg: &SimConfig,
    certificate: Option<&Ellipsoid>,
) -> Result<Trajectory> {
    sys.check_gain(k)?;
    let n = sys.n();
    if spec.dim() != n {
        return Err(Error::Dimension(format!(
            "quantizer has {} axes, plant has {n} states",
            spec.dim()
        )));
    }
    if let Some(e) = certificate {
        if e.dim() != n {
            return Err(Error::Dimension("certificate size differs from the plant".into()));
        }
    }
    cfg.validate(n)?;
    let a = sys.a();
    let bk = sys.b() * k;
    let h = cfg.step;
    let steps = (cfg.horizon / h).round().max(1.0) as usize;

    let mut x = cfg.x0.clone();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        quantized: Vec::new(),
        values: certificate.map(|_| Vec::new()),
        flags: Vec::new(),
        entry_time: None,
        max_value_after_entry: None,
        lock: None,
        status: SimStatus::Completed,
    };
    let mut near: Option<(Vector, usize)> = None;
    let mut flag = SampleFlag::Free;

    let observe = |traj: &mut Trajectory, t: f64, x: &Vector| {
        if let Some(e) = certificate {
            let v = e.level(x);
            if traj.entry_time.is_none() && v <= 1.0 {
                traj.entry_time = Some(t);
            }
            if traj.entry_time.is_some() {
                let m = traj.max_value_after_entry.get_or_insert(v);
                *m = m.max(v);
            }
        }
    };
    let record = |traj: &mut Trajectory, t: f64, x: &Vector, flag: SampleFlag| {
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.quantized.push(quantize_unchecked(x, spec));
        if let (Some(vals), Some(e)) = (traj.values.as_mut(), certificate) {
            vals.push(e.level(x));
        }
        traj.flags.push(flag);
    };

    observe(&mut traj, 0.0, &x);
    record(&mut traj, 0.0, &x, flag);
    for i in 1..=steps {
        let t = i as f64 * h;
        if traj.lock.is_none() {
            let k1 = rhs(a, &bk, spec, &x);
            let k2 = rhs(a, &bk, spec, &(&x + &k1 * (0.5 * h)));
            let k3 = rhs(a, &bk, spec, &(&x + &k2 * (0.5 * h)));
            let k4 = rhs(a, &bk, spec, &(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let norm = x.norm();
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                traj.status = SimStatus::Diverged { time: t, norm };
                record(&mut traj, t, &x, flag);
                return Ok(traj);
            }
            let cand = snap(&x, spec, cfg.chatter_threshold);
            let is_near = (&cand - &x).amax() <= cfg.chatter_threshold
                && cand != x
                && is_krasovskii_equilibrium(&cand, sys, k, spec, equilibrium_tol(&cand));
            near = match (near.take(), is_near) {
                (Some((p, c)), true) if p == cand => Some((p, c + 1)),
                (_, true) => Some((cand, 1)),
                (_, false) => None,
            };
            flag = if near.is_some() {
                SampleFlag::Chattering
            } else {
                SampleFlag::Free
            };
            if let Some((p, c)) = &near {
                if *c >= cfg.chatter_window {
                    x = p.clone();
                    traj.lock = Some(EquilibriumLock {
                        time: t,
                        point: p.clone(),
                    });
                    flag = SampleFlag::Locked;
                }
            }
        }
        observe(&mut traj, t, &x);
        if i % cfg.record_every == 0 || i == steps {
            record(&mut traj, t, &x, flag);
        }
    }
    Ok(traj)
}

/// ⟨∇W(x), Ax + BKq(x)⟩ against −(x₁ − x₂)²/2 for W(x) = (x₁ − x₂)²/2.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub samples: usize,
    pub max_discrepancy: f64,
    /// (inner product, expected) per sample.
    pub values: Vec<(f64, f64)>,
}

impl ContractionReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_discrepancy <= tol
    }
}

pub fn diagonal_contraction_check(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    samples: &[Vector],
) -> Result<ContractionReport> {
    sys.check_gain(k)?;
    if sys.n() != 2 || spec.dim() != 2 {
        return Err(Error::Dimension(
            "the diagonal contraction check needs a two-state plant".into(),
        ));
    }
    let bk = sys.b() * k;
    let mut values = Vec::with_capacity(samples.len());
    let mut max_discrepancy: f64 = 0.0;
    for x in samples {
        let f = sys.a() * x + &bk * quantize(x, spec)?;
        let d = x[0] - x[1];
        let inner = d * (f[0] - f[1]);
        let expected = -0.5 * d * d;
        max_discrepancy = max_discrepancy.max((inner - expected).abs());
        values.push((inner, expected));
    }
    Ok(ContractionReport {
        samples: samples.len(),
        max_discrepancy,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitSummary {
    pub x0: Vector,
    pub entry_time: Option<f64>,
    pub lock_point: Option<Vector>,
    pub max_value_after_entry: Option<f64>,
    /// `None` on success, otherwise why the run failed or aborted.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portrait {
    pub summaries: Vec<PortraitSummary>,
    pub trajectories: Vec<Option<Trajectory>>,
}

impl Portrait {
    /// index, x0 entries, entry_time, lock point entries, max V after
    /// entry, error. Missing values are empty cells.
    pub fn summary_csv(&self) -> String {
        let n = self.summaries.first().map_or(0, |s| s.x0.len());
        let mut out = String::from("index");
        for i in 1..=n {
            let _ = write!(out, ",x0_{i}");
        }
        out.push_str(",entry_time");
        for i in 1..=n {
            let _ = write!(out, ",lock_{i}");
        }
        out.push_str(",max_v_after_entry,error\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for (i, s) in self.summaries.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in s.x0.iter() {
                let _ = write!(out, ",{v:e}");
            }
            let _ = write!(out, ",{}", opt(s.entry_time));
            for j in 0..n {
                let _ = write!(out, ",{}", opt(s.lock_point.as_ref().map(|p| p[j])));
            }
            let err = s.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(out, ",{},{err}", opt(s.max_value_after_entry));
        }
        out
    }

    /// All trajectories stacked, with a leading trajectory index column.
    pub fn trajectories_csv(&self) -> String {
        let first = self.trajectories.iter().flatten().next();
        let mut out = String::new();
        let Some(first) = first else {
            return out;
        };
        write_header(&mut out, first.states[0].len(), first.values.is_some(), true);
        for (i, t) in self.trajectories.iter().enumerate() {
            if let Some(t) = t {
                t.write_rows(&mut out, Some(i));
            }
        }
        out
    }
}

/// Runs [`simulate`] from every initial state. Failures are recorded per
/// row; the batch itself never fails.
pub fn batch_portrait(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    initial_states: &[Vector],
    template: &SimConfig,
    certificate: Option<&Ellipsoid>,
    exec: ExecMode,
) -> Portrait {
    let runs = exec.map(initial_states, |x0| {
        let cfg = SimConfig {
            x0: x0.clone(),
            ..template.clone()
        };
        simulate(sys, k, spec, &cfg, certificate)
    });
    let mut summaries = Vec::with_capacity(runs.len());
    let mut trajectories = Vec::with_capacity(runs.len());
    for (x0, run) in initial_states.iter().zip(runs) {
        match run {
            Ok(t) => {
                let error = match t.status {
                    SimStatus::Completed => None,
                    SimStatus::Diverged { time, norm } => {
                        Some(format!("diverged at t = {time:e} (norm {norm:e})"))
                    }
                };
                summaries.push(PortraitSummary {
                    x0: x0.clone(),
                    entry_time: t.entry_time,
                    lock_point: t.lock.as_ref().map(|l| l.point.clone()),
                    max_value_after_entry: t.max_value_after_entry,
                    error,
                });
                trajectories.push(Some(t));
            }
            Err(e) => {
                summaries.push(PortraitSummary {
                    x0: x0.clone(),
                    entry_time: None,
                    lock_point: None,
                    max_value_after_entry: None,
                    error: Some(e.to_string()),
                });
                trajectories.push(None);
            }
        }
    }
    Portrait {
        summaries,
        trajectories,
    }
}

/// `count` points evenly spaced on the circle of radius `r` in the plane
/// of the first two coordinates, starting on the positive x₁ axis.
pub fn circle_states(count: usize, r: f64, n: usize) -> Vec<Vector> {
    (0..count)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let mut v = Vector::zeros(n);
            v[0] = r * th.cos();
            if n > 1 {
                v[1] = r * th.sin();
            }
            v
        })
        .collect()
}
