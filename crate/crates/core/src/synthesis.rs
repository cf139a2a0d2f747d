//! Gain design by alternating over the slack-variable (projection) form of
//! the attractor certificate.
//!
//! With the gain fixed the 3n×3n LMI is linear in (P, S1, S2, X1, X2); with
//! the slacks fixed it is linear in (P, S1, S2, K). Each half-step keeps the
//! best objective over a τ grid. The previous half-step's solution is always
//! feasible for the next one at the same τ, so it is carried as a fallback
//! candidate and the objective sequence cannot increase.

use std::fmt::Write as _;

use crate::analysis::{
    add_measure, tau_grid, tau_upper_bound, verify_certificate, AnalysisResult,
    CertificateCheck, Ellipsoid, Measure,
};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::linalg::{care_solve, is_stabilizable, Matrix, SymMatrix};
use crate::quantizer::{QuantizerSpec, SectorMultipliers};
use crate::sdp::{
    self, check_solution, AffineExpr, BarrierSettings, BarrierSolver, LmiConstraint,
    ProblemBuilder, SdpProblem, SdpSolution, Sense, SignConstraint, Var,
};
use crate::system::LtiSystem;

/// Absolute strictness margin used for every LMI of a synthesis run.
pub const DEFAULT_SYNTHESIS_MARGIN: f64 = 1e-7;

/// Proximal weight for the step solves. The slack matrices X1, X2 do not
/// enter the objective and the projected LMI leaves them a large optimal
/// face; a firm pull toward the origin keeps them at moderate scale, which
/// is what lets the next gain step move.
pub const DEFAULT_SYNTHESIS_REGULARIZATION: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGain {
    Given(Matrix),
    /// LQR gain with Q = I, R = I.
    Lqr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub initial_gain: InitialGain,
    pub measure: Measure,
    /// Stop once the objective decreased by less than this on three
    /// consecutive steps.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub tau_grid_size: usize,
    /// Fixed for the whole run so a carried solution stays admissible.
    pub strict_margin: f64,
    /// P ⪯ cap·I under the logdet measure; `None` selects 1e4 / min δᵢ².
    pub logdet_cap: Option<f64>,
    pub exec: ExecMode,
    pub solver: BarrierSettings,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            initial_gain: InitialGain::Lqr,
            measure: Measure::TraceInverse,
            tolerance: 1e-4,
            max_iterations: 200,
            tau_grid_size: 15,
            strict_margin: DEFAULT_SYNTHESIS_MARGIN,
            logdet_cap: None,
            exec: ExecMode::default(),
            solver: BarrierSettings {
                regularization: DEFAULT_SYNTHESIS_REGULARIZATION,
                ..BarrierSettings::default()
            },
        }
    }
}

impl SynthesisConfig {
    pub fn with_gain(k: Matrix) -> Self {
        Self {
            initial_gain: InitialGain::Given(k),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 || self.tau_grid_size == 0 {
            return Err(Error::InvalidInput(
                "max_iterations and tau_grid_size must be at least 1".into(),
            ));
        }
        if !(self.strict_margin > 0.0 && self.strict_margin.is_finite()) {
            return Err(Error::InvalidInput("strict margin must be positive".into()));
        }
        Ok(())
    }

    fn cap_for(&self, spec: &QuantizerSpec) -> f64 {
        self.logdet_cap
            .unwrap_or_else(|| 1e4 / spec.delta().min().powi(2))
    }
}

/// Handles to the variables of a projection-form problem. Exactly one of
/// `k` and (`x1`, `x2`) is present.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub p: Var,
    pub s1: Var,
    pub s2: Var,
    pub n: Option<Var>,
    pub x1: Option<Var>,
    pub x2: Option<Var>,
    pub k: Option<Var>,
}

/// Feasibility form of the 3n×3n projection LMI
///
/// ```text
/// [ −He(X1)   P − X2 + X1ᵀ(A+BK)      X1ᵀBK       ]
/// [   •       He(X2ᵀ(A+BK)) + τP      X2ᵀBK − S2  ]  ≺ 0,   ΔᵀS1Δ ≤ τ.
/// [   •           •                   −S1 − 2S2   ]
/// ```
///
/// Pass the gain to free the slacks, or the slacks to free the gain. Leaving
/// both free would make the inequality bilinear and is rejected, as is
/// fixing both.
pub fn build_projection_lmi(
    sys: &LtiSystem,
    spec: &QuantizerSpec,
    tau: f64,
    gain: Option<&Matrix>,
    slacks: Option<(&Matrix, &Matrix)>,
) -> Result<(SdpProblem, ProjectionVars)> {
    let (b, vars) = projection_builder(sys, spec, tau, gain, slacks)?;
    Ok((b.build()?, vars))
}

/// Projection LMI plus the configured measure objective, with the run's
/// absolute strictness margin.
pub fn build_projection_problem(
    sys: &LtiSystem,
    spec: &QuantizerSpec,
    tau: f64,
    gain: Option<&Matrix>,
    slacks: Option<(&Matrix, &Matrix)>,
    cfg: &SynthesisConfig,
) -> Result<(SdpProblem, ProjectionVars)> {
    let (mut b, mut vars) = projection_builder(sys, spec, tau, gain, slacks)?;
    b.strict_margin_absolute(cfg.strict_margin);
    vars.n = add_measure(&mut b, vars.p, sys.n(), cfg.measure, cfg.cap_for(spec));
    Ok((b.build()?, vars))
}

fn projection_builder(
    sys: &LtiSystem,
    spec: &QuantizerSpec,
    tau: f64,
    gain: Option<&Matrix>,
    slacks: Option<(&Matrix, &Matrix)>,
) -> Result<(ProblemBuilder, ProjectionVars)> {
    if spec.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "quantizer has {} axes, plant has {} states",
            spec.dim(),
            sys.n()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let n = sys.n();
    let eye = Matrix::identity(n, n);
    let mut b = ProblemBuilder::new(format!("projection tau={tau}"));
    let p = b.symmetric("P", n, SignConstraint::PositiveDefinite);
    let s1 = b.diagonal("S1", n, SignConstraint::PositiveDefinite);
    let s2 = b.diagonal("S2", n, SignConstraint::PositiveDefinite);
    let pe = AffineExpr::var(p);
    let s1e = AffineExpr::var(s1);
    let s2e = AffineExpr::var(s2);

    let (b00, b01, b02, b11, b12, x1v, x2v, kv);
    match (gain, slacks) {
        (Some(k), None) => {
            sys.check_gain(k)?;
            let acl = sys.closed_loop(k)?;
            let bk = sys.b() * k;
            let x1 = b.rectangular("X1", n, n);
            let x2 = b.rectangular("X2", n, n);
            let x1e = AffineExpr::var(x1);
            let x2e = AffineExpr::var(x2);
            b00 = -x1e.he();
            b01 = pe.clone() - x2e.clone() + x1e.transpose().rmul(&acl);
            b02 = x1e.transpose().rmul(&bk);
            b11 = x2e.transpose().rmul(&acl).he() + pe.clone() * tau;
            b12 = x2e.transpose().rmul(&bk) - s2e.clone();
            (x1v, x2v, kv) = (Some(x1), Some(x2), None);
        }
        (None, Some((x1, x2))) => {
            if x1.shape() != (n, n) || x2.shape() != (n, n) {
                return Err(Error::Dimension("slack matrices must be n x n".into()));
            }
            let k = b.rectangular("K", sys.m(), n);
            let x1t_b = x1.transpose() * sys.b();
            let x2t_b = x2.transpose() * sys.b();
            let x1_bk = AffineExpr::product(&x1t_b, k, &eye);
            let x2_bk = AffineExpr::product(&x2t_b, k, &eye);
            b00 = AffineExpr::constant(-(x1 + x1.transpose()));
            b01 = pe.clone() + AffineExpr::constant(x1.transpose() * sys.a() - x2)
                + x1_bk.clone();
            b02 = x1_bk;
            let x2t_a = x2.transpose() * sys.a();
            b11 = AffineExpr::constant(&x2t_a + x2t_a.transpose())
                + x2_bk.he()
                + pe.clone() * tau;
            b12 = x2_bk - s2e.clone();
            (x1v, x2v, kv) = (None, None, Some(k));
        }
        (None, None) => {
            return Err(Error::InvalidInput(
                "gain and slack variables cannot both be free: the inequality would be bilinear"
                    .into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(Error::InvalidInput(
                "fix either the gain or the slack variables, not both".into(),
            ))
        }
    }
    b.constrain(
        LmiConstraint::new("projection", &[n, n, n], Sense::NegativeDefinite)
            .with_block(0, 0, b00)
            .with_block(0, 1, b01)
            .with_block(0, 2, b02)
            .with_block(1, 1, b11)
            .with_block(1, 2, b12)
            .with_block(2, 2, -s1e.clone() - s2e * 2.0),
    );
    let delta = Matrix::from_column_slice(n, 1, spec.delta().as_slice());
    b.constrain(LmiConstraint::scalar_le("sector budget", s1e.quad(&delta), tau));
    Ok((
        b,
        ProjectionVars {
            p,
            s1,
            s2,
            n: None,
            x1: x1v,
            x2: x2v,
            k: kv,
        },
    ))
}

/// The 3n×3n projection matrix at given values.
#[allow(clippy::too_many_arguments)]
pub fn projection_matrix(
    acl: &Matrix,
    bk: &Matrix,
    tau: f64,
    p: &Matrix,
    s1: &Matrix,
    s2: &Matrix,
    x1: &Matrix,
    x2: &Matrix,
) -> Matrix {
    let n = acl.nrows();
    let blocks = [
        [
            -(x1 + x1.transpose()),
            p - x2 + x1.transpose() * acl,
            x1.transpose() * bk,
        ],
        [
            Matrix::zeros(n, n),
            x2.transpose() * acl + acl.transpose() * x2 + p * tau,
            x2.transpose() * bk - s2,
        ],
        [Matrix::zeros(n, n), Matrix::zeros(n, n), -s1 - s2 * 2.0],
    ];
    let mut m = Matrix::zeros(3 * n, 3 * n);
    for i in 0..3 {
        for j in i..3 {
            m.view_mut((i * n, j * n), (n, n)).copy_from(&blocks[i][j]);
            if i != j {
                m.view_mut((j * n, i * n), (n, n))
                    .copy_from(&blocks[i][j].transpose());
            }
        }
    }
    m
}

/// WᵀQW with W = [A+BK, BK; I, 0; 0, I] and
/// Q = [0, P, 0; P, τP, −S2; 0, −S2, −S1 − 2S2].
pub fn projected_quadratic(acl: &Matrix, bk: &Matrix, tau: f64, p: &Matrix, s1: &Matrix, s2: &Matrix) -> Matrix {
    let n = acl.nrows();
    let mut w = Matrix::zeros(3 * n, 2 * n);
    w.view_mut((0, 0), (n, n)).copy_from(acl);
    w.view_mut((0, n), (n, n)).copy_from(bk);
    w.view_mut((n, 0), (n, n)).fill_with_identity();
    w.view_mut((2 * n, n), (n, n)).fill_with_identity();
    let mut q = Matrix::zeros(3 * n, 3 * n);
    q.view_mut((0, n), (n, n)).copy_from(p);
    q.view_mut((n, 0), (n, n)).copy_from(p);
    q.view_mut((n, n), (n, n)).copy_from(&(p * tau));
    q.view_mut((n, 2 * n), (n, n)).copy_from(&(-s2));
    q.view_mut((2 * n, n), (n, n)).copy_from(&(-s2));
    q.view_mut((2 * n, 2 * n), (n, n)).copy_from(&(-s1 - s2 * 2.0));
    w.transpose() * q * w
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTripCheck {
    /// λmax of the projection matrix.
    pub projection_lambda_max: f64,
    /// λmax of WᵀQW.
    pub reconstructed_lambda_max: f64,
    pub sector_residual: f64,
    pub ok: bool,
}

/// Evaluates both the projection LMI and the reconstructed WᵀQW at the
/// given values; `ok` iff both are negative definite and ΔᵀS1Δ ≤ τ.
#[allow(clippy::too_many_arguments)]
pub fn projection_roundtrip_check(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tau: f64,
    p: &SymMatrix,
    mult: &SectorMultipliers,
    x1: &Matrix,
    x2: &Matrix,
) -> Result<RoundTripCheck> {
    sys.check_gain(k)?;
    let n = sys.n();
    if spec.dim() != n || p.dim() != n || mult.s1().len() != n || x1.shape() != (n, n) || x2.shape() != (n, n) {
        return Err(Error::Dimension("round-trip inputs disagree in size".into()));
    }
    let acl = sys.closed_loop(k)?;
    let bk = sys.b() * k;
    let (s1, s2) = (mult.s1_matrix(), mult.s2_matrix());
    let big = projection_matrix(&acl, &bk, tau, p.as_matrix(), &s1, &s2, x1, x2);
    let small = projected_quadratic(&acl, &bk, tau, p.as_matrix(), &s1, &s2);
    let projection_lambda_max = SymMatrix::symmetrize(big).max_eigenvalue();
    let reconstructed_lambda_max = SymMatrix::symmetrize(small).max_eigenvalue();
    let d = spec.delta();
    let sector_residual = d.component_mul(d).dot(mult.s1()) - tau;
    Ok(RoundTripCheck {
        projection_lambda_max,
        reconstructed_lambda_max,
        sector_residual,
        ok: projection_lambda_max < 0.0 && reconstructed_lambda_max < 0.0 && sector_residual <= 0.0,
    })
}

/// Searches slack matrices (X1, X2) that satisfy the projection LMI for a
/// fixed analysis certificate (K, P, S1, S2, τ). Returns `Ok(None)` when
/// the solver finds none.
///
/// The margin is a small fraction of the certificate's own margin: with
/// WᵀW ⪰ I, any X giving the projection matrix ≺ −εI forces the analysis
/// matrix ≺ −εI, so ε cannot exceed |λmax| of the latter.
#[allow(clippy::too_many_arguments)]
pub fn recover_slacks(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tau: f64,
    p: &SymMatrix,
    mult: &SectorMultipliers,
    solver: &BarrierSettings,
) -> Result<Option<(Matrix, Matrix)>> {
    let cert = verify_certificate(sys, k, spec, tau, p, mult)?;
    if !cert.ok {
        return Err(Error::InvalidInput(format!(
            "not a certificate: lambda_max {:.3e}, sector residual {:.3e}",
            cert.lmi_lambda_max, cert.sector_residual
        )));
    }
    let n = sys.n();
    let acl = sys.closed_loop(k)?;
    let bk = sys.b() * k;
    // The inequality is jointly linear in (P, S1, S2, X1, X2), so divide the
    // fixed data by its magnitude, solve for X/σ and scale back. Certificates
    // from the trace measure can carry |P| ~ 1e5, which stalls phase I
    // otherwise.
    let sigma = p
        .as_matrix()
        .amax()
        .max(mult.s1().amax())
        .max(mult.s2().amax());
    let pm = p.as_matrix() / sigma;
    let (s1, s2) = (mult.s1_matrix() / sigma, mult.s2_matrix() / sigma);
    let mut b = ProblemBuilder::new(format!("slack recovery tau={tau}"));
    let x1 = b.rectangular("X1", n, n);
    let x2 = b.rectangular("X2", n, n);
    let (x1e, x2e) = (AffineExpr::var(x1), AffineExpr::var(x2));
    b.constrain(
        LmiConstraint::new("projection", &[n, n, n], Sense::NegativeDefinite)
            .with_block(0, 0, -x1e.he())
            .with_block(0, 1, AffineExpr::constant(pm.clone()) - x2e.clone() + x1e.transpose().rmul(&acl))
            .with_block(0, 2, x1e.transpose().rmul(&bk))
            .with_block(1, 1, x2e.transpose().rmul(&acl).he() + AffineExpr::constant(&pm * tau))
            .with_block(1, 2, x2e.transpose().rmul(&bk) - AffineExpr::constant(s2.clone()))
            .with_block(2, 2, AffineExpr::constant(-&s1 - &s2 * 2.0))
            .with_margin(1e-3 * cert.lmi_lambda_max.abs() / sigma),
    );
    let prob = b.build()?;
    let sol = sdp::solve(&prob, &BarrierSolver::new(solver.clone()));
    if !sol.is_optimal() {
        return Ok(None);
    }
    let val = |v: Var| sol.value(v).expect("optimal solution has values") * sigma;
    Ok(Some((val(x1), val(x2))))
}

/// Which variables a step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Gain fixed; P, S1, S2, X1, X2 free.
    Slack = 1,
    /// Slacks fixed; P, S1, S2, K free.
    Gain = 2,
}

/// Where a step's reported point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSource {
    Solver,
    /// No grid point beat the previous step's solution, which was kept.
    Carried,
}

impl StepSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepSource::Solver => "solver",
            StepSource::Carried => "carried",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// One LMI step per iteration, counted from 1.
    pub iteration: usize,
    pub step: Step,
    pub tau: f64,
    pub objective: f64,
    pub gain: Matrix,
    pub shape: SymMatrix,
    pub source: StepSource,
    /// Grid points at which the solver returned a verified point.
    pub feasible_points: usize,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthesisTrace {
    pub records: Vec<TraceRecord>,
}

impl SynthesisTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Whether every objective is at most its predecessor plus `slack`.
    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective + slack)
    }

    /// `iteration,step,tau,objective,source` with full-precision floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,step,tau,objective,source\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{}",
                r.iteration,
                r.step as u8,
                r.tau,
                r.objective,
                r.source.as_str()
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Decrease below tolerance on three consecutive steps.
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutcome {
    pub initial_gain: Matrix,
    pub gain: Matrix,
    pub ellipsoid: Ellipsoid,
    pub multipliers: SectorMultipliers,
    pub tau: f64,
    pub objective: f64,
    pub measure: Measure,
    pub trace: SynthesisTrace,
    pub stop: StopReason,
    /// Re-check of the returned (K, P, S1, S2, τ) against the 2n×2n
    /// analysis certificate.
    pub certificate: CertificateCheck,
}

impl SynthesisOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.records.len()
    }

    /// 1 − last/first over the trace objectives.
    pub fn relative_decrease(&self) -> f64 {
        let obj = self.trace.objectives();
        1.0 - obj[obj.len() - 1] / obj[0]
    }
}

/// Measure value of an ellipsoid: trace(P⁻¹) or −logdet(P).
pub fn measure_value(e: &Ellipsoid, measure: Measure) -> f64 {
    let m = crate::analysis::ellipsoid_metrics(e);
    match measure {
        Measure::TraceInverse => m.trace_inverse,
        Measure::NegLogDet => -m.logdet,
    }
}

/// 100·(1 − after/before) on the shared measure.
pub fn improvement_report(before: &AnalysisResult, after: &SynthesisOutcome) -> Result<f64> {
    if before.measure != after.measure {
        return Err(Error::InvalidInput(format!(
            "measure mismatch: analysis used {}, synthesis used {}",
            before.measure.as_str(),
            after.measure.as_str()
        )));
    }
    let b = measure_value(&before.ellipsoid, before.measure);
    let a = measure_value(&after.ellipsoid, after.measure);
    Ok(100.0 * (1.0 - a / b))
}

#[derive(Debug, Clone)]
struct StepPoint {
    tau: f64,
    objective: f64,
    p: Matrix,
    s1: Matrix,
    s2: Matrix,
    n: Option<Matrix>,
    k: Matrix,
    x1: Matrix,
    x2: Matrix,
}

struct Run<'a> {
    sys: &'a LtiSystem,
    spec: &'a QuantizerSpec,
    cfg: &'a SynthesisConfig,
}

impl Run<'_> {
    fn problem(&self, tau: f64, step: Step, k: &Matrix, x: (&Matrix, &Matrix)) -> Result<(SdpProblem, ProjectionVars)> {
        match step {
            Step::Slack => build_projection_problem(self.sys, self.spec, tau, Some(k), None, self.cfg),
            Step::Gain => build_projection_problem(self.sys, self.spec, tau, None, Some(x), self.cfg),
        }
    }

    fn start_point(&self, prob: &SdpProblem, vars: &ProjectionVars, prev: &StepPoint) -> SdpSolution {
        let mut assign: Vec<(Var, &Matrix)> = vec![(vars.p, &prev.p), (vars.s1, &prev.s1), (vars.s2, &prev.s2)];
        if let (Some(v), Some(m)) = (vars.n, prev.n.as_ref()) {
            assign.push((v, m));
        }
        if let Some(v) = vars.x1 {
            assign.push((v, &prev.x1));
        }
        if let Some(v) = vars.x2 {
            assign.push((v, &prev.x2));
        }
        if let Some(v) = vars.k {
            assign.push((v, &prev.k));
        }
        SdpSolution::from_values(prob, &assign)
    }

    /// Solves one grid point; `None` unless the solver point re-verifies.
    fn solve_at(&self, tau: f64, step: Step, k: &Matrix, x: (&Matrix, &Matrix), prev: Option<&StepPoint>) -> Option<StepPoint> {
        let (prob, vars) = self.problem(tau, step, k, x).ok()?;
        let solver = BarrierSolver::new(self.cfg.solver.clone());
        let start = prev.map(|pt| self.start_point(&prob, &vars, pt));
        let sol = sdp::solve_with_start(&prob, &solver, start.as_ref().and_then(|s| s.coordinates()));
        if !sol.is_optimal() || !check_solution(&prob, &sol, 0.5 * self.cfg.strict_margin).all_satisfied() {
            return None;
        }
        let val = |v: Var| sol.value(v).expect("optimal solution has values");
        let sym = |m: Matrix| SymMatrix::symmetrize(m).into_inner();
        Some(StepPoint {
            tau,
            objective: sol.objective,
            p: sym(val(vars.p)),
            s1: val(vars.s1),
            s2: val(vars.s2),
            n: vars.n.map(|v| sym(val(v))),
            k: vars.k.map(val).unwrap_or_else(|| k.clone()),
            x1: vars.x1.map(val).unwrap_or_else(|| x.0.clone()),
            x2: vars.x2.map(val).unwrap_or_else(|| x.1.clone()),
        })
    }
}

/// Grid with max τ̄ that also contains `keep`.
fn grid_with(tau_bar: f64, size: usize, keep: Option<f64>) -> Vec<f64> {
    let mut g = tau_grid(tau_bar, size);
    if let Some(t) = keep {
        if !g.iter().any(|x| *x == t) {
            g.push(t);
            g.sort_by(f64::total_cmp);
        }
    }
    g
}

/// Best verified point (ties toward larger τ).
fn best_of(points: Vec<Option<StepPoint>>) -> (Option<StepPoint>, usize) {
    let feasible = points.iter().filter(|p| p.is_some()).count();
    let keyed: Vec<(f64, f64)> = points
        .iter()
        .map(|p| p.as_ref().map_or((0.0, f64::NAN), |p| (p.tau, p.objective)))
        .collect();
    let best = crate::analysis::best_index(&keyed);
    (best.and_then(|i| points.into_iter().nth(i).flatten()), feasible)
}

/// Alternating design: slack step with the gain fixed, then gain step with
/// the slacks fixed, each optimizing the measure over the τ grid, until the
/// objective stalls for three consecutive steps or the iteration budget is
/// spent. The returned gain and shape are re-verified against the analysis
/// certificate.
pub fn synthesize(sys: &LtiSystem, spec: &QuantizerSpec, cfg: &SynthesisConfig) -> Result<SynthesisOutcome> {
    cfg.validate()?;
    if spec.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "quantizer has {} axes, plant has {} states",
            spec.dim(),
            sys.n()
        )));
    }
    let n = sys.n();
    let k0 = match &cfg.initial_gain {
        InitialGain::Given(k) => {
            sys.check_gain(k)?;
            k.clone()
        }
        InitialGain::Lqr => {
            if !is_stabilizable(sys.a(), sys.b()) {
                return Err(Error::NoStabilizingSolution("(A, B) is not stabilizable".into()));
            }
            care_solve(sys.a(), sys.b(), &SymMatrix::identity(n), &SymMatrix::identity(sys.m()))?
        }
    };
    let (acl, _) = sys.hurwitz_closed_loop(&k0)?;
    let run = Run { sys, spec, cfg };
    let mut grid = grid_with(tau_upper_bound(&acl)?, cfg.tau_grid_size, None);
    let mut k_bar = k0.clone();
    let zero = Matrix::zeros(n, n);
    let mut x_bar = (zero.clone(), zero);
    let mut current: Option<StepPoint> = None;
    let mut trace = SynthesisTrace::default();
    let mut stalls = 0;
    let mut stop = StopReason::MaxIterations;

    for it in 0..cfg.max_iterations {
        let step = if it % 2 == 0 { Step::Slack } else { Step::Gain };
        let points = cfg.exec.map(&grid, |&tau| {
            run.solve_at(tau, step, &k_bar, (&x_bar.0, &x_bar.1), current.as_ref())
        });
        let (best, feasible) = best_of(points);
        let (point, source) = match (best, current.take()) {
            (Some(b), Some(prev)) if b.objective < prev.objective => (b, StepSource::Solver),
            (_, Some(prev)) => (prev, StepSource::Carried),
            (Some(b), None) => (b, StepSource::Solver),
            (None, None) => {
                return Err(Error::Infeasible(format!(
                    "initial step found no feasible tau on a {}-point grid up to {:.6e}",
                    grid.len(),
                    grid.last().copied().unwrap_or(f64::NAN)
                )))
            }
        };
        if let Some(last) = trace.records.last() {
            if last.objective - point.objective < cfg.tolerance {
                stalls += 1;
            } else {
                stalls = 0;
            }
        }
        trace.records.push(TraceRecord {
            iteration: it + 1,
            step,
            tau: point.tau,
            objective: point.objective,
            gain: point.k.clone(),
            shape: SymMatrix::symmetrize(point.p.clone()),
            source,
            feasible_points: feasible,
            grid_points: grid.len(),
        });
        match step {
            Step::Slack => x_bar = (point.x1.clone(), point.x2.clone()),
            Step::Gain => {
                k_bar = point.k.clone();
                let (acl, _) = sys.hurwitz_closed_loop(&k_bar)?;
                grid = grid_with(tau_upper_bound(&acl)?, cfg.tau_grid_size, Some(point.tau));
            }
        }
        current = Some(point);
        if stalls >= 3 {
            stop = StopReason::Converged;
            break;
        }
    }

    let last = current.expect("at least one step ran");
    let mult = SectorMultipliers::new(last.s1.diagonal(), last.s2.diagonal())?;
    let p = SymMatrix::symmetrize(last.p.clone());
    let certificate = verify_certificate(sys, &last.k, spec, last.tau, &p, &mult)?;
    if !certificate.ok {
        return Err(Error::Solver(format!(
            "final certificate re-check failed: lambda_max {:.3e}, sector residual {:.3e}",
            certificate.lmi_lambda_max, certificate.sector_residual
        )));
    }
    Ok(SynthesisOutcome {
        initial_gain: k0,
        gain: last.k,
        ellipsoid: Ellipsoid::new(p)?,
        multipliers: mult,
        tau: last.tau,
        objective: last.objective,
        measure: cfg.measure,
        trace,
        stop,
        certificate,
    })
}
