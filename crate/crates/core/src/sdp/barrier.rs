//! Dense primal log-barrier interior-point method.
//!
//! The problem is taken in the form
//! minimize cᵀy − Σ logdet L_j(y) subject to A y = b, G_i(y) ⪰ 0.
//! Equalities are eliminated through a null-space basis, a phase I problem
//! (minimize s with G_i + sI ⪰ 0 inside a coordinate box, widened on
//! failure) finds a strictly feasible point unless a strictly feasible start
//! is supplied, and phase II follows the central path with Newton centering
//! and an exact line search along the Newton direction.

use nalgebra::SymmetricEigen;

use super::problem::{ConicForm, PsdBlock, SolveStatus, SolverDiagnostics};
use crate::linalg::{Matrix, Vector};

/// Output of a backend run on a conic form.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendOutput {
    pub status: SolveStatus,
    pub y: Option<Vec<f64>>,
    pub diagnostics: SolverDiagnostics,
}

/// A conic solver accepting [`ConicForm`] problems.
pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;

    /// `start`, when given, is used as the initial point if it is strictly
    /// feasible and as a phase I seed otherwise.
    fn solve(&self, form: &ConicForm, start: Option<&[f64]>) -> BackendOutput;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSettings {
    /// Growth factor of the barrier parameter t.
    pub mu: f64,
    pub t0: f64,
    pub t_max: f64,
    /// Stop once the gap bound is below gap_abs + gap_rel·|f|.
    pub gap_abs: f64,
    pub gap_rel: f64,
    /// When centering stalls, accept the iterate if the gap bound is below
    /// accept_gap_rel·max(1, |f|).
    pub accept_gap_rel: f64,
    /// Centering ends when λ²/2 falls below this.
    pub newton_tol: f64,
    pub max_newton_per_center: usize,
    pub max_newton_total: usize,
    /// Weight γ of a proximal term γ‖y‖²/2 added to every centering
    /// problem. It keeps the central path bounded when the feasible set has
    /// recession directions the objective does not see; its pull is
    /// independent of t and so fades as t grows.
    pub regularization: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            mu: 20.0,
            t0: 1.0,
            t_max: 1e14,
            gap_abs: 1e-9,
            gap_rel: 1e-8,
            accept_gap_rel: 1e-4,
            newton_tol: 1e-6,
            max_newton_per_center: 100,
            max_newton_total: 4000,
            regularization: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BarrierSolver {
    pub settings: BarrierSettings,
}

impl BarrierSolver {
    pub fn new(settings: BarrierSettings) -> Self {
        Self { settings }
    }
}

#[derive(Debug, Clone)]
struct Blk {
    constant: Matrix,
    coeffs: Vec<(usize, Matrix)>,
    /// Objective logdet terms carry weight t, barrier terms weight 1.
    objective: bool,
}

impl Blk {
    fn eval(&self, w: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (k, m) in &self.coeffs {
            if w[*k] != 0.0 {
                out += m * w[*k];
            }
        }
        out
    }

    fn dim(&self) -> usize {
        self.constant.nrows()
    }
}

#[derive(Debug, Clone)]
struct Prob {
    m: usize,
    c: Vec<f64>,
    blocks: Vec<Blk>,
    /// |w_k| < bound on the first `bounded` coordinates, handled as scalar
    /// barriers rather than a dense block.
    bound: Option<(f64, usize)>,
    reg: f64,
}

impl Prob {
    fn factor(&self, w: &[f64]) -> Option<Vec<Matrix>> {
        if let Some((r, k)) = self.bound {
            if w[..k].iter().any(|x| !(x.abs() < r)) {
                return None;
            }
        }
        self.blocks
            .iter()
            .map(|b| b.eval(w).cholesky().map(|ch| ch.unpack()))
            .collect()
    }

    /// Barrier-weighted objective without the constant term.
    fn linear(&self, w: &[f64]) -> f64 {
        self.c.iter().zip(w).map(|(c, x)| c * x).sum()
    }

    fn barrier_dim(&self) -> usize {
        let bounds = self.bound.map_or(0, |(_, k)| 2 * k);
        bounds + self.blocks.iter().filter(|b| !b.objective).map(|b| b.dim()).sum::<usize>()
    }
}

fn logdet_from_chol(l: &Matrix) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Affine reparametrization y = y_p + Z w.
struct Reduction {
    y_p: Vector,
    z: Option<Matrix>,
}

impl Reduction {
    fn lift(&self, w: &[f64]) -> Vec<f64> {
        match &self.z {
            None => w.to_vec(),
            Some(z) => (&self.y_p + z * Vector::from_column_slice(w)).iter().copied().collect(),
        }
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        match &self.z {
            None => y.to_vec(),
            Some(z) => (z.transpose() * (Vector::from_column_slice(y) - &self.y_p))
                .iter()
                .copied()
                .collect(),
        }
    }

    fn map_block(&self, b: &PsdBlock, objective: bool) -> Blk {
        match &self.z {
            None => Blk {
                constant: b.constant.clone(),
                coeffs: b.coeffs.clone(),
                objective,
            },
            Some(z) => {
                let mut constant = b.constant.clone();
                for (k, m) in &b.coeffs {
                    constant += m * self.y_p[*k];
                }
                let mut coeffs = Vec::new();
                for j in 0..z.ncols() {
                    let mut acc = Matrix::zeros(b.dim(), b.dim());
                    for (k, m) in &b.coeffs {
                        let zk = z[(*k, j)];
                        if zk != 0.0 {
                            acc += m * zk;
                        }
                    }
                    if acc.amax() > 1e-15 {
                        coeffs.push((j, acc));
                    }
                }
                Blk {
                    constant,
                    coeffs,
                    objective,
                }
            }
        }
    }
}

enum Centered {
    Done,
    /// Per-center step limit reached while still making progress.
    MaxIter,
    Stalled,
    EarlyExit,
    Budget,
}

struct Counter {
    steps: usize,
    budget: usize,
}

impl SolverBackend for BarrierSolver {
    fn name(&self) -> &str {
        "barrier"
    }

    fn solve(&self, form: &ConicForm, start: Option<&[f64]>) -> BackendOutput {
        let mut diag = SolverDiagnostics {
            backend: self.name().into(),
            gap_bound: f64::INFINITY,
            ..Default::default()
        };
        let fail = |status, msg: String, mut diag: SolverDiagnostics| {
            diag.message = msg;
            BackendOutput {
                status,
                y: None,
                diagnostics: diag,
            }
        };

        let red = match eliminate_equalities(form) {
            Ok(r) => r,
            Err(msg) => return fail(SolveStatus::Infeasible, msg, diag),
        };
        let m = red.z.as_ref().map(|z| z.ncols()).unwrap_or(form.num_vars);
        let c_red: Vec<f64> = match &red.z {
            None => form.c.clone(),
            Some(z) => (z.transpose() * Vector::from_column_slice(&form.c)).iter().copied().collect(),
        };
        let mut blocks: Vec<Blk> = form.blocks.iter().map(|b| red.map_block(b, false)).collect();
        blocks.extend(form.logdet.iter().map(|b| red.map_block(b, true)));
        let prob = Prob {
            m,
            c: c_red,
            blocks,
            bound: None,
            reg: self.settings.regularization,
        };

        let mut w = match start {
            Some(s) if s.len() == form.num_vars => red.project(s),
            _ => vec![0.0; m],
        };
        let mut counter = Counter {
            steps: 0,
            budget: self.settings.max_newton_total,
        };

        if prob.blocks.is_empty() {
            if prob.c.iter().any(|c| *c != 0.0) {
                return fail(SolveStatus::NumericalFailure, "objective unbounded below".into(), diag);
            }
            diag.gap_bound = 0.0;
            return BackendOutput {
                status: SolveStatus::Optimal,
                y: Some(red.lift(&w)),
                diagnostics: diag,
            };
        }

        if prob.factor(&w).is_none() {
            match self.phase_one(&prob, &w, &mut counter) {
                PhaseOne::Feasible(w1) => w = w1,
                PhaseOne::Infeasible(msg) => {
                    diag.phase1_steps = counter.steps;
                    diag.newton_steps = counter.steps;
                    return fail(SolveStatus::Infeasible, msg, diag);
                }
                PhaseOne::Failure(msg) => {
                    diag.phase1_steps = counter.steps;
                    diag.newton_steps = counter.steps;
                    return fail(SolveStatus::NumericalFailure, msg, diag);
                }
            }
        }
        diag.phase1_steps = counter.steps;

        if prob.c.iter().all(|c| *c == 0.0) && form.logdet.is_empty() {
            // Pure feasibility: any strictly feasible point is optimal.
            diag.gap_bound = 0.0;
            diag.newton_steps = counter.steps;
            return BackendOutput {
                status: SolveStatus::Optimal,
                y: Some(red.lift(&w)),
                diagnostics: diag,
            };
        }

        let p = prob.barrier_dim() as f64;
        let s = &self.settings;
        let mut t = s.t0;
        let status;
        loop {
            let outcome = center(&prob, &mut w, t, s, &mut counter, |_| false);
            let f = objective_value(&prob, &w) + form.c0;
            let gap = p / t;
            diag.gap_bound = gap;
            if !f.is_finite() || w.iter().any(|x| !x.is_finite()) {
                status = Err("iterate left the domain".to_string());
                break;
            }
            if f < -1e15 || w.iter().any(|x| x.abs() > 1e15) {
                status = Err("objective appears unbounded below".to_string());
                break;
            }
            let tight = gap <= s.gap_abs + s.gap_rel * f.abs();
            let acceptable = gap <= s.accept_gap_rel * f.abs().max(1.0);
            match outcome {
                Centered::Done if tight => {
                    status = Ok(());
                    break;
                }
                Centered::Done | Centered::MaxIter if t * s.mu <= s.t_max => {
                    t *= s.mu;
                }
                Centered::Done | Centered::MaxIter | Centered::Stalled | Centered::Budget | Centered::EarlyExit => {
                    if !matches!(outcome, Centered::Done | Centered::MaxIter) {
                        diag.stalled = true;
                    }
                    status = if acceptable || tight {
                        Ok(())
                    } else {
                        Err(format!("stalled at t = {t:.3e} with gap bound {gap:.3e}"))
                    };
                    break;
                }
            }
        }
        diag.newton_steps = counter.steps;
        match status {
            Ok(()) => BackendOutput {
                status: SolveStatus::Optimal,
                y: Some(red.lift(&w)),
                diagnostics: diag,
            },
            Err(msg) => fail(SolveStatus::NumericalFailure, msg, diag),
        }
    }
}

enum PhaseOne {
    Feasible(Vec<f64>),
    Infeasible(String),
    Failure(String),
}

/// Half-widths of the successive phase I boxes, relative to the start scale.
const PHASE_ONE_BOXES: [f64; 3] = [1e3, 1e6, 1e10];

impl BarrierSolver {
    /// Without the box, G_i + sI ⪰ 0 has no analytic center whenever the
    /// feasible set is unbounded, and centering drifts off to infinity.
    fn phase_one(&self, prob: &Prob, w0: &[f64], counter: &mut Counter) -> PhaseOne {
        let scale = w0.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
        let mut last = PhaseOne::Infeasible("no strictly feasible point".into());
        for r in PHASE_ONE_BOXES {
            match self.phase_one_boxed(prob, w0, r * scale, counter) {
                PhaseOne::Infeasible(msg) => last = PhaseOne::Infeasible(msg),
                other => return other,
            }
        }
        last
    }

    fn phase_one_boxed(&self, prob: &Prob, w0: &[f64], radius: f64, counter: &mut Counter) -> PhaseOne {
        let m = prob.m;
        let mut worst: f64 = 0.0;
        for b in &prob.blocks {
            let f = b.eval(w0);
            if f.iter().any(|v| !v.is_finite()) {
                return PhaseOne::Failure("non-finite block at the start point".into());
            }
            let lam = SymmetricEigen::new(f).eigenvalues.min();
            worst = worst.max(-lam);
        }
        let blocks: Vec<Blk> = prob
            .blocks
            .iter()
            .map(|b| {
                let mut coeffs = b.coeffs.clone();
                coeffs.push((m, Matrix::identity(b.dim(), b.dim())));
                Blk {
                    constant: b.constant.clone(),
                    coeffs,
                    objective: false,
                }
            })
            .collect();
        let mut c = vec![0.0; m + 1];
        c[m] = 1.0;
        let aux = Prob {
            m: m + 1,
            c,
            blocks,
            bound: Some((radius, m)),
            reg: 0.0,
        };
        let mut w: Vec<f64> = w0.to_vec();
        w.push(worst + 1.0);
        let p = aux.barrier_dim() as f64;
        let s = &self.settings;
        let mut t = s.t0;
        let feasible = |v: &[f64]| v[m] < 0.0 && prob.factor(&v[..m]).is_some();
        loop {
            let outcome = center(&aux, &mut w, t, s, counter, feasible);
            if feasible(&w) {
                w.truncate(m);
                return PhaseOne::Feasible(w);
            }
            let lower = w[m] - p / t;
            if matches!(outcome, Centered::Done) && lower > 0.0 {
                return PhaseOne::Infeasible(format!(
                    "no strictly feasible point with |y| <= {radius:.1e}: phase I bound {lower:.3e} > 0"
                ));
            }
            match outcome {
                Centered::Done | Centered::MaxIter if t * s.mu <= s.t_max => t *= s.mu,
                Centered::Budget => {
                    return PhaseOne::Failure("Newton budget exhausted in phase I".into())
                }
                _ => {
                    return PhaseOne::Infeasible(format!(
                        "phase I stalled at s = {:.3e} (t = {t:.3e}); no strictly feasible point found",
                        w[m]
                    ))
                }
            }
        }
    }
}

fn objective_value(prob: &Prob, w: &[f64]) -> f64 {
    let mut f = prob.linear(w);
    for b in prob.blocks.iter().filter(|b| b.objective) {
        match b.eval(w).cholesky() {
            Some(ch) => f -= logdet_from_chol(&ch.unpack()),
            None => return f64::INFINITY,
        }
    }
    f
}

fn eliminate_equalities(form: &ConicForm) -> Result<Reduction, String> {
    let m = form.num_vars;
    if form.eq_a.nrows() == 0 {
        return Ok(Reduction {
            y_p: Vector::zeros(m),
            z: None,
        });
    }
    let a = &form.eq_a;
    let b = Vector::from_column_slice(&form.eq_b);
    let svd = a.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    let y_p = svd
        .solve(&b, tol)
        .map_err(|e| format!("equality system: {e}"))?;
    let resid = (a * &y_p - &b).norm();
    if resid > 1e-9 * (1.0 + b.norm()) {
        return Err(format!("inconsistent equality constraints (residual {resid:.3e})"));
    }
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    let cut = tol * tol.max(eig.eigenvalues.max());
    let cols: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] <= cut).collect();
    let z = Matrix::from_fn(m, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])]);
    Ok(Reduction { y_p, z: Some(z) })
}

/// Newton centering of t·cᵀw − Σ ω_b logdet F_b(w), ω_b = t for objective
/// blocks and 1 otherwise.
fn center(
    prob: &Prob,
    w: &mut Vec<f64>,
    t: f64,
    s: &BarrierSettings,
    counter: &mut Counter,
    early_exit: impl Fn(&[f64]) -> bool,
) -> Centered {
    let m = prob.m;
    for _ in 0..s.max_newton_per_center {
        if counter.steps >= counter.budget {
            return Centered::Budget;
        }
        counter.steps += 1;
        let Some(chols) = prob.factor(w) else {
            return Centered::Stalled;
        };
        let mut g: Vector = Vector::from_iterator(m, prob.c.iter().map(|c| t * c));
        let mut h = Matrix::zeros(m, m);
        let mut scaled: Vec<Vec<(usize, Matrix)>> = Vec::with_capacity(prob.blocks.len());
        for (b, l) in prob.blocks.iter().zip(&chols) {
            let omega = if b.objective { t } else { 1.0 };
            let gs: Vec<(usize, Matrix)> = b
                .coeffs
                .iter()
                .filter_map(|(k, fk)| {
                    let x = l.solve_lower_triangular(fk)?;
                    let gk = l.solve_lower_triangular(&x.transpose())?;
                    Some((*k, gk))
                })
                .collect();
            if gs.len() != b.coeffs.len() {
                return Centered::Stalled;
            }
            for (a, (k, gk)) in gs.iter().enumerate() {
                g[*k] -= omega * gk.trace();
                for (l_idx, gl) in &gs[a..] {
                    let v = omega * gk.dot(gl);
                    h[(*k, *l_idx)] += v;
                    if *k != *l_idx {
                        h[(*l_idx, *k)] += v;
                    }
                }
            }
            scaled.push(gs);
        }
        for k in 0..m {
            g[k] += prob.reg * w[k];
            h[(k, k)] += prob.reg;
        }
        if let Some((r, nb)) = prob.bound {
            for k in 0..nb {
                let (a, b) = (1.0 / (r - w[k]), 1.0 / (r + w[k]));
                g[k] += a - b;
                h[(k, k)] += a * a + b * b;
            }
        }
        let Some(dx) = newton_direction(&h, &g) else {
            return Centered::Stalled;
        };
        let lambda2 = -g.dot(&dx);
        if !lambda2.is_finite() {
            return Centered::Stalled;
        }
        if lambda2 / 2.0 <= s.newton_tol {
            return Centered::Done;
        }

        // Eigenvalues of L⁻¹ ΔF L⁻ᵀ per block make φ(α) explicit.
        let mut spectra: Vec<(f64, Vec<f64>)> = Vec::with_capacity(prob.blocks.len());
        for (b, gs) in prob.blocks.iter().zip(&scaled) {
            let omega = if b.objective { t } else { 1.0 };
            let n = b.dim();
            let mut d = Matrix::zeros(n, n);
            for (k, gk) in gs {
                if dx[*k] != 0.0 {
                    d += gk * dx[*k];
                }
            }
            let ev = SymmetricEigen::new(d).eigenvalues;
            spectra.push((omega, ev.iter().copied().collect()));
        }
        if let Some((r, nb)) = prob.bound {
            let mut ev = Vec::with_capacity(2 * nb);
            for k in 0..nb {
                ev.push(-dx[k] / (r - w[k]));
                ev.push(dx[k] / (r + w[k]));
            }
            spectra.push((1.0, ev));
        }
        let slope = t * prob.c.iter().zip(dx.iter()).map(|(c, d)| c * d).sum::<f64>()
            + prob.reg * w.iter().zip(dx.iter()).map(|(x, d)| x * d).sum::<f64>();
        let curv = prob.reg * dx.norm_squared();
        let Some(mut alpha) = exact_line_search(slope, curv, &spectra) else {
            return Centered::Stalled;
        };
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(dx.iter()).map(|(x, d)| x + alpha * d).collect();
            if prob.factor(&trial).is_some() {
                let dphi = alpha * slope + 0.5 * curv * alpha * alpha
                    - spectra
                        .iter()
                        .map(|(om, ev)| om * ev.iter().map(|e| (alpha * e).ln_1p()).sum::<f64>())
                        .sum::<f64>();
                if dphi < 0.0 {
                    *w = trial;
                    accepted = true;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || alpha < 1e-12 {
            return Centered::Stalled;
        }
        if early_exit(w) {
            return Centered::EarlyExit;
        }
    }
    Centered::MaxIter
}

/// Solves H dx = −g with Jacobi scaling and a Cholesky factorization,
/// falling back to an eigenvalue pseudo-inverse.
fn newton_direction(h: &Matrix, g: &Vector) -> Option<Vector> {
    let m = g.len();
    let d = Vector::from_iterator(
        m,
        (0..m).map(|i| {
            let hii = h[(i, i)];
            if hii > 0.0 && hii.is_finite() {
                1.0 / hii.sqrt()
            } else {
                1.0
            }
        }),
    );
    let hs = Matrix::from_fn(m, m, |i, j| h[(i, j)] * d[i] * d[j]);
    let rhs = -g.component_mul(&d);
    let z = match hs.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let eig = SymmetricEigen::new(hs);
            let top = eig.eigenvalues.amax();
            if !(top > 0.0) {
                return None;
            }
            let mut z = Vector::zeros(m);
            for i in 0..m {
                let lam = eig.eigenvalues[i];
                if lam > 1e-12 * top {
                    let u = eig.eigenvectors.column(i);
                    z += u * (u.dot(&rhs) / lam);
                }
            }
            z
        }
    };
    let dx = z.component_mul(&d);
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

/// Minimizes φ(α) = α·slope + curv·α²/2 − Σ ω Σ log(1 + α e) over the
/// domain 1 + α e > 0, α > 0, by safeguarded Newton on φ'.
fn exact_line_search(slope: f64, curv: f64, spectra: &[(f64, Vec<f64>)]) -> Option<f64> {
    let dphi = |a: f64| -> (f64, f64) {
        let mut d1 = slope + curv * a;
        let mut d2 = curv;
        for (om, ev) in spectra {
            for &e in ev {
                let r = e / (1.0 + a * e);
                d1 -= om * r;
                d2 += om * r * r;
            }
        }
        (d1, d2)
    };
    let a_max = spectra
        .iter()
        .flat_map(|(_, ev)| ev.iter())
        .filter(|e| **e < 0.0)
        .map(|e| -1.0 / e)
        .fold(f64::INFINITY, f64::min);
    let (d0, _) = dphi(0.0);
    if !(d0 < 0.0) {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = a_max;
    let mut a = if a_max.is_finite() { (0.5 * a_max).min(1.0) } else { 1.0 };
    if !a_max.is_finite() {
        while dphi(a).0 < 0.0 {
            lo = a;
            a *= 2.0;
            if a > 1e15 {
                return Some(a);
            }
        }
        hi = a;
        a = 0.5 * (lo + hi);
    }
    for _ in 0..100 {
        let (d1, d2) = dphi(a);
        if d1 < 0.0 {
            lo = a;
        } else {
            hi = a;
        }
        if d1.abs() <= 1e-12 * (slope.abs() + 1.0) || hi - lo <= 1e-14 * hi {
            break;
        }
        let newton = a - d1 / d2;
        a = if d2 > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    if a_max.is_finite() {
        a = a.min(0.99 * a_max);
    }
    (a > 0.0 && a.is_finite()).then_some(a)
}
