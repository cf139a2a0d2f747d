//! Certified ellipsoidal attractors for a fixed gain, and the
//! Lyapunov-equation baseline they are compared against.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::linalg::{
    is_positive_definite, lyapunov_solve, spectral_norm, Matrix, SymMatrix, Vector,
};
use crate::quantizer::{QuantizerSpec, SectorMultipliers};
use crate::sdp::{
    self, check_solution, AffineExpr, BarrierSettings, BarrierSolver, LmiConstraint, Objective,
    ProblemBuilder, SdpProblem, Sense, SignConstraint, SolveStatus, Var,
};
use crate::system::LtiSystem;

/// Size criterion minimized over certified ellipsoids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// −log det(P).
    NegLogDet,
    /// trace(N) with [[N, I], [I, P]] ⪰ 0, a linear surrogate for trace(P⁻¹).
    TraceInverse,
}

impl Measure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::NegLogDet => "logdet",
            Measure::TraceInverse => "trace",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logdet" | "-logdet" | "neg-logdet" => Ok(Measure::NegLogDet),
            "trace" | "trace-inverse" | "trace(n)" => Ok(Measure::TraceInverse),
            other => Err(Error::InvalidInput(format!("unknown measure `{other}`"))),
        }
    }
}

/// E(P) = {x : xᵀPx ≤ 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    p: SymMatrix,
}

impl Ellipsoid {
    pub fn new(p: SymMatrix) -> Result<Self> {
        if !is_positive_definite(&p, 0.0) {
            return Err(Error::NotPositiveDefinite("ellipsoid shape matrix".into()));
        }
        Ok(Self { p })
    }

    pub fn shape(&self) -> &SymMatrix {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// V(x) = xᵀPx.
    pub fn level(&self, x: &Vector) -> f64 {
        self.p.quad_form(x)
    }

    pub fn contains(&self, x: &Vector) -> bool {
        self.level(x) <= 1.0
    }

    /// Whether self ⊆ other, i.e. P_other ⪯ P_self, with a relative slack.
    pub fn is_inside(&self, other: &Ellipsoid, rel_tol: f64) -> bool {
        let diff = SymMatrix::symmetrize(other.p.as_matrix() - self.p.as_matrix());
        diff.max_eigenvalue() <= rel_tol * self.p.max_eigenvalue()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidMetrics {
    /// det(P)^(−1/2), proportional to the volume.
    pub volume_proxy: f64,
    /// Semi-axis lengths 1/√λᵢ(P), longest first.
    pub semiaxes: Vec<f64>,
    /// Unit directions of the semi-axes, as columns in the same order.
    pub directions: Matrix,
    pub trace_inverse: f64,
    pub logdet: f64,
}

impl EllipsoidMetrics {
    pub fn largest_semiaxis(&self) -> f64 {
        self.semiaxes[0]
    }

    pub fn principal_direction(&self) -> Vector {
        self.directions.column(0).into_owned()
    }
}

pub fn ellipsoid_metrics(e: &Ellipsoid) -> EllipsoidMetrics {
    let (vals, vecs) = e.p.eigen_sorted();
    let n = vals.len();
    let semiaxes: Vec<f64> = vals.iter().map(|l| 1.0 / l.sqrt()).collect();
    let logdet: f64 = vals.iter().map(|l| l.ln()).sum();
    let mut directions = vecs;
    for j in 0..n {
        // Deterministic orientation: largest-magnitude entry positive.
        let col = directions.column(j);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            directions.column_mut(j).neg_mut();
        }
    }
    EllipsoidMetrics {
        volume_proxy: (-0.5 * logdet).exp(),
        semiaxes,
        directions,
        trace_inverse: vals.iter().map(|l| 1.0 / l).sum(),
        logdet,
    }
}

/// Upper end of the τ interval: 2·0.99·min |Re λ(A+BK)|.
pub fn tau_upper_bound(acl: &Matrix) -> Result<f64> {
    let spec = crate::linalg::spectrum(acl)?;
    if !spec.is_hurwitz {
        return Err(Error::UnstabilizedLoop {
            abscissa: spec.spectral_abscissa(),
        });
    }
    Ok(2.0 * 0.99 * spec.min_abs_real_part)
}

/// `size` log-spaced points on [1e-3·τmax, τmax], ascending.
pub fn tau_grid(tau_max: f64, size: usize) -> Vec<f64> {
    match size {
        0 => vec![],
        1 => vec![tau_max],
        _ => {
            let lo = (tau_max * 1e-3).ln();
            let hi = tau_max.ln();
            (0..size)
                .map(|i| {
                    if i + 1 == size {
                        tau_max
                    } else {
                        (lo + (hi - lo) * i as f64 / (size - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub measure: Measure,
    pub grid_size: usize,
    /// Eigenvalue cap P ⪯ cap·I added under the logdet measure. `None`
    /// selects 1e4 / min δᵢ².
    pub logdet_cap: Option<f64>,
    /// Relative strictness margin for the strict LMIs.
    pub strict_margin: f64,
    pub exec: ExecMode,
    pub solver: BarrierSettings,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            measure: Measure::NegLogDet,
            grid_size: 20,
            logdet_cap: None,
            strict_margin: sdp::DEFAULT_STRICT_MARGIN,
            exec: ExecMode::default(),
            solver: BarrierSettings::default(),
        }
    }
}

impl AnalysisOptions {
    pub fn with_measure(measure: Measure) -> Self {
        Self {
            measure,
            ..Self::default()
        }
    }

    pub(crate) fn cap_for(&self, spec: &QuantizerSpec) -> f64 {
        self.logdet_cap
            .unwrap_or_else(|| 1e4 / spec.delta().min().powi(2))
    }
}

/// Handles to the variables of an analysis problem.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisVars {
    pub p: Var,
    pub s1: Var,
    pub s2: Var,
    pub n: Option<Var>,
}

fn check_dims(sys: &LtiSystem, k: &Matrix, spec: &QuantizerSpec) -> Result<()> {
    sys.check_gain(k)?;
    if spec.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "quantizer has {} axes, plant has {} states",
            spec.dim(),
            sys.n()
        )));
    }
    Ok(())
}

fn delta_column(spec: &QuantizerSpec) -> Matrix {
    Matrix::from_column_slice(spec.dim(), 1, spec.delta().as_slice())
}

/// Feasibility form of the certificate: the 2n×2n strict LMI
/// [[He(P(A+BK)) + τP, PBK − S2], [•, −S1 − 2S2]] ≺ 0 and
/// ΔᵀS1Δ − τ ≤ 0, in P ≻ 0 and diagonal S1, S2 ≻ 0.
pub fn build_analysis_lmi(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tau: f64,
) -> Result<SdpProblem> {
    let (b, _) = analysis_builder(sys, k, spec, tau)?;
    b.build()
}

/// Analysis LMI plus the measure objective (and the logdet cap, if any).
pub fn build_analysis_problem(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tau: f64,
    opts: &AnalysisOptions,
) -> Result<(SdpProblem, AnalysisVars)> {
    let (mut b, mut vars) = analysis_builder(sys, k, spec, tau)?;
    b.strict_margin_relative(opts.strict_margin);
    vars.n = add_measure(&mut b, vars.p, sys.n(), opts.measure, opts.cap_for(spec));
    Ok((b.build()?, vars))
}

/// Installs the measure objective on P: −logdet with P ⪯ cap·I, or trace(N)
/// through the Schur block. Returns N when it was introduced.
pub(crate) fn add_measure(
    b: &mut ProblemBuilder,
    p: Var,
    n: usize,
    measure: Measure,
    cap: f64,
) -> Option<Var> {
    match measure {
        Measure::NegLogDet => {
            b.constrain(LmiConstraint::single(
                "eigenvalue cap",
                AffineExpr::var(p) - AffineExpr::identity(n) * cap,
                Sense::NegativeSemidefinite,
            ));
            b.objective(Objective::minimize_neg_logdet(p));
            None
        }
        Measure::TraceInverse => {
            let nv = add_trace_inverse(b, p, n);
            b.objective(Objective::minimize_trace(nv));
            Some(nv)
        }
    }
}

/// Adds N with [[N, I], [I, P]] ⪰ 0 and returns it.
pub(crate) fn add_trace_inverse(b: &mut ProblemBuilder, p: Var, n: usize) -> Var {
    let nv = b.symmetric("N", n, SignConstraint::Free);
    b.constrain(
        LmiConstraint::new("trace-inverse bound", &[n, n], Sense::PositiveSemidefinite)
            .with_block(0, 0, AffineExpr::var(nv))
            .with_block(0, 1, AffineExpr::identity(n))
            .with_block(1, 1, AffineExpr::var(p)),
    );
    nv
}

fn analysis_builder(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tau: f64,
) -> Result<(ProblemBuilder, AnalysisVars)> {
    check_dims(sys, k, spec)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let n = sys.n();
    let acl = sys.closed_loop(k)?;
    let bk = sys.b() * k;
    let eye = Matrix::identity(n, n);
    let mut b = ProblemBuilder::new(format!("analysis tau={tau}"));
    let p = b.symmetric("P", n, SignConstraint::PositiveDefinite);
    let s1 = b.diagonal("S1", n, SignConstraint::PositiveDefinite);
    let s2 = b.diagonal("S2", n, SignConstraint::PositiveDefinite);
    let top_left = AffineExpr::product(&eye, p, &acl).he() + AffineExpr::var(p) * tau;
    let top_right = AffineExpr::product(&eye, p, &bk) - AffineExpr::var(s2);
    let bottom = -AffineExpr::var(s1) - AffineExpr::var(s2) * 2.0;
    b.constrain(
        LmiConstraint::new("dissipation", &[n, n], Sense::NegativeDefinite)
            .with_block(0, 0, top_left)
            .with_block(0, 1, top_right)
            .with_block(1, 1, bottom),
    );
    b.constrain(LmiConstraint::scalar_le(
        "sector budget",
        AffineExpr::var(s1).quad(&delta_column(spec)),
        tau,
    ));
    Ok((
        b,
        AnalysisVars {
            p,
            s1,
            s2,
            n: None,
        },
    ))
}

/// The 2n×2n certificate matrix evaluated at given values.
pub fn analysis_matrix(acl: &Matrix, bk: &Matrix, tau: f64, p: &Matrix, s1: &Matrix, s2: &Matrix) -> Matrix {
    let n = acl.nrows();
    let mut m = Matrix::zeros(2 * n, 2 * n);
    let tl = p * acl + acl.transpose() * p + p * tau;
    let tr = p * bk - s2;
    let br = -s1 - s2 * 2.0;
    m.view_mut((0, 0), (n, n)).copy_from(&tl);
    m.view_mut((0, n), (n, n)).copy_from(&tr);
    m.view_mut((n, 0), (n, n)).copy_from(&tr.transpose());
    m.view_mut((n, n), (n, n)).copy_from(&br);
    m
}

/// Independent eigenvalue check of a certificate (P, S1, S2, τ).
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateCheck {
    pub lmi_lambda_max: f64,
    pub sector_residual: f64,
    pub p_lambda_min: f64,
    pub ok: bool,
}

pub fn verify_certificate(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tau: f64,
    p: &SymMatrix,
    mult: &SectorMultipliers,
) -> Result<CertificateCheck> {
    check_dims(sys, k, spec)?;
    let acl = sys.closed_loop(k)?;
    let bk = sys.b() * k;
    let m = analysis_matrix(&acl, &bk, tau, p.as_matrix(), &mult.s1_matrix(), &mult.s2_matrix());
    let lmi_lambda_max = SymMatrix::symmetrize(m).max_eigenvalue();
    let d = spec.delta();
    let sector_residual = d.component_mul(d).dot(mult.s1()) - tau;
    let p_lambda_min = p.min_eigenvalue();
    Ok(CertificateCheck {
        lmi_lambda_max,
        sector_residual,
        p_lambda_min,
        ok: lmi_lambda_max < 0.0 && sector_residual <= 0.0 && p_lambda_min > 0.0,
    })
}

/// Outcome of a single grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSample {
    pub tau: f64,
    pub status: SolveStatus,
    /// NaN unless the point was feasible.
    pub objective: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub ellipsoid: Ellipsoid,
    pub multipliers: SectorMultipliers,
    pub tau: f64,
    pub objective: f64,
    pub measure: Measure,
    pub tau_grid: Vec<f64>,
    pub per_tau: Vec<TauSample>,
    pub certificate: CertificateCheck,
}

pub(crate) struct PointSolve {
    pub sample: TauSample,
    pub p: Option<SymMatrix>,
    pub mult: Option<SectorMultipliers>,
}

fn solve_point(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tau: f64,
    opts: &AnalysisOptions,
) -> PointSolve {
    let failed = |status, message: String| PointSolve {
        sample: TauSample {
            tau,
            status,
            objective: f64::NAN,
            message,
        },
        p: None,
        mult: None,
    };
    let (prob, vars) = match build_analysis_problem(sys, k, spec, tau, opts) {
        Ok(x) => x,
        Err(e) => return failed(SolveStatus::NumericalFailure, e.to_string()),
    };
    let solver = BarrierSolver::new(opts.solver.clone());
    let sol = sdp::solve(&prob, &solver);
    if !sol.is_optimal() {
        return failed(sol.status, sol.diagnostics.message.clone());
    }
    let margin = prob.constraints()[0].margin / 2.0;
    let report = check_solution(&prob, &sol, margin);
    if !report.all_satisfied() {
        let names: Vec<_> = report.violations().map(|c| c.name.clone()).collect();
        return failed(
            SolveStatus::NumericalFailure,
            format!("re-check failed for {}", names.join(", ")),
        );
    }
    let p = sol.sym_value(vars.p).expect("optimal solution has values");
    let mult = SectorMultipliers::new(
        sol.value(vars.s1).unwrap().diagonal(),
        sol.value(vars.s2).unwrap().diagonal(),
    );
    let Ok(mult) = mult else {
        return failed(SolveStatus::NumericalFailure, "non-positive multipliers".into());
    };
    PointSolve {
        sample: TauSample {
            tau,
            status: SolveStatus::Optimal,
            objective: sol.objective,
            message: String::new(),
        },
        p: Some(p),
        mult: Some(mult),
    }
}

/// Index of the best feasible sample; ties go to the larger τ.
pub(crate) fn best_index(samples: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, &(tau, obj)) in samples.iter().enumerate() {
        if !obj.is_finite() {
            continue;
        }
        best = match best {
            None => Some((i, tau, obj)),
            Some((bi, btau, bobj)) => {
                let tie = 1e-12 * bobj.abs().max(1.0);
                if obj < bobj - tie || ((obj - bobj).abs() <= tie && tau > btau) {
                    Some((i, tau, obj))
                } else {
                    Some((bi, btau, bobj))
                }
            }
        };
    }
    best.map(|b| b.0)
}

/// Smallest certified attractor over a log-spaced τ grid on
/// (0, 2·0.99·min |Re λ(A+BK)|].
pub fn analyze(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    opts: &AnalysisOptions,
) -> Result<AnalysisResult> {
    check_dims(sys, k, spec)?;
    if opts.grid_size == 0 {
        return Err(Error::InvalidInput("tau grid must have at least one point".into()));
    }
    let (acl, _) = sys.hurwitz_closed_loop(k)?;
    let grid = tau_grid(tau_upper_bound(&acl)?, opts.grid_size);
    analyze_on_grid(sys, k, spec, opts, &grid)
}

/// [`analyze`] over an explicit τ grid.
pub fn analyze_on_grid(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    opts: &AnalysisOptions,
    grid: &[f64],
) -> Result<AnalysisResult> {
    check_dims(sys, k, spec)?;
    sys.hurwitz_closed_loop(k)?;
    let points = opts.exec.map(grid, |&tau| solve_point(sys, k, spec, tau, opts));
    let keyed: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.sample.tau, p.sample.objective))
        .collect();
    let per_tau: Vec<TauSample> = points.iter().map(|p| p.sample.clone()).collect();
    let Some(best) = best_index(&keyed) else {
        let detail: Vec<String> = per_tau
            .iter()
            .map(|s| format!("tau={:.6e}: {:?} {}", s.tau, s.status, s.message))
            .collect();
        return Err(Error::Infeasible(format!(
            "no feasible tau on the grid; {}",
            detail.join("; ")
        )));
    };
    let chosen = &points[best];
    let p = chosen.p.clone().expect("feasible point has P");
    let mult = chosen.mult.clone().expect("feasible point has multipliers");
    let certificate = verify_certificate(sys, k, spec, chosen.sample.tau, &p, &mult)?;
    if !certificate.ok {
        return Err(Error::Solver(format!(
            "certificate re-check failed: lambda_max {:.3e}, sector residual {:.3e}",
            certificate.lmi_lambda_max, certificate.sector_residual
        )));
    }
    Ok(AnalysisResult {
        ellipsoid: Ellipsoid::new(p)?,
        multipliers: mult,
        tau: chosen.sample.tau,
        objective: chosen.sample.objective,
        measure: opts.measure,
        tau_grid: grid.to_vec(),
        per_tau,
        certificate,
    })
}

/// Lyapunov-equation attractor E(P̃/(λmax(P̃)·ρ²)), with P̃ solving
/// He((A+BK)ᵀP̃) = −Q, Θx = 2‖P̃BK‖₂/λmin(Q) and ρ = √2·δ·Θx.
///
/// Requires equal quantization steps on every axis.
pub fn baseline_liberzon(
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    q: &SymMatrix,
) -> Result<Ellipsoid> {
    check_dims(sys, k, spec)?;
    let delta = spec.uniform_step().ok_or_else(|| {
        Error::InvalidInput(
            "the Lyapunov baseline uses one scalar error bound; quantization steps differ across axes"
                .into(),
        )
    })?;
    if q.dim() != sys.n() {
        return Err(Error::Dimension("Q must be n x n".into()));
    }
    if !is_positive_definite(q, 0.0) {
        return Err(Error::NotPositiveDefinite("Q".into()));
    }
    let (acl, _) = sys.hurwitz_closed_loop(k)?;
    let p_tilde = lyapunov_solve(&acl, q)?;
    let bk = sys.b() * k;
    let theta = 2.0 * spectral_norm(&(p_tilde.as_matrix() * bk)) / q.min_eigenvalue();
    let rho = 2f64.sqrt() * delta * theta;
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(
            "degenerate baseline: rho = 0 (the quantizer does not enter the loop)".into(),
        ));
    }
    let scale = p_tilde.max_eigenvalue() * rho * rho;
    Ellipsoid::new(p_tilde.scale(1.0 / scale))
}

/// Q = MᵀM + 1e-3·I with entries of M uniform on [−1, 1].
pub fn random_weight<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SymMatrix {
    let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..=1.0));
    SymMatrix::symmetrize(m.transpose() * &m + Matrix::identity(n, n) * 1e-3)
}
