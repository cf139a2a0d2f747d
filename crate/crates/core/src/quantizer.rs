//! Uniform sensor quantizer, its error map Ψ(x) = q(x) − x, the sector
//! conditions satisfied by Ψ, and the componentwise Krasovskii hull.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::system::LtiSystem;

/// Relative tolerance deciding whether a coordinate sits on the grid.
pub const GRID_TOL: f64 = 1e-9;

const SECTOR_SLACK: f64 = 1e-12;

/// Per-axis quantization steps δᵢ > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    delta: Vector,
}

impl QuantizerSpec {
    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if delta.is_empty() {
            return Err(Error::InvalidInput("quantizer needs at least one axis".into()));
        }
        if let Some(d) = delta.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "quantization steps must be positive and finite, got {d}"
            )));
        }
        Ok(Self {
            delta: Vector::from_vec(delta),
        })
    }

    pub fn uniform(n: usize, delta: f64) -> Result<Self> {
        Self::new(vec![delta; n])
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    pub fn delta(&self) -> &Vector {
        &self.delta
    }

    /// The common step if all axes share it.
    pub fn uniform_step(&self) -> Option<f64> {
        let d0 = self.delta[0];
        self.delta
            .iter()
            .all(|d| (d - d0).abs() <= 1e-12 * d0)
            .then_some(d0)
    }

    /// Componentwise scaling of the steps.
    pub fn scaled(&self, factors: &Vector) -> Result<Self> {
        check_dim(factors.len(), self.dim())?;
        Self::new(self.delta.component_mul(factors).iter().copied().collect())
    }

    pub(crate) fn check(&self, x: &Vector) -> Result<()> {
        check_dim(x.len(), self.dim())
    }
}

fn check_dim(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!(
            "vector has {got} entries, quantizer has {want} axes"
        )));
    }
    Ok(())
}

/// Diagonal multipliers for the two sector conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorMultipliers {
    s1: Vector,
    s2: Vector,
}

impl SectorMultipliers {
    pub fn new(s1: Vector, s2: Vector) -> Result<Self> {
        if s1.len() != s2.len() {
            return Err(Error::Dimension("S1 and S2 differ in size".into()));
        }
        if s1.iter().chain(s2.iter()).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::NotPositiveDefinite(
                "sector multipliers need strictly positive diagonals".into(),
            ));
        }
        Ok(Self { s1, s2 })
    }

    /// Diagonal of S1.
    pub fn s1(&self) -> &Vector {
        &self.s1
    }

    /// Diagonal of S2.
    pub fn s2(&self) -> &Vector {
        &self.s2
    }

    pub fn s1_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&self.s1)
    }

    pub fn s2_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&self.s2)
    }
}

fn quantize_scalar(x: f64, d: f64) -> f64 {
    // sign(0) = 0 falls out of the floor for |x| < d. The division can land
    // one ulp off an integer, so settle k as the largest with k·d ≤ |x|;
    // this keeps q(q(x)) = q(x) and |q| ≤ |x| exactly in floating point.
    let a = x.abs();
    let mut k = (a / d).floor();
    if d * (k + 1.0) <= a {
        k += 1.0;
    } else if k > 0.0 && d * k > a {
        k -= 1.0;
    }
    let q = d * k;
    if x < 0.0 {
        -q
    } else {
        q
    }
}

/// qᵢ(x) = δᵢ·sign(xᵢ)·⌊|xᵢ|/δᵢ⌋.
pub fn quantize(x: &Vector, spec: &QuantizerSpec) -> Result<Vector> {
    spec.check(x)?;
    Ok(quantize_unchecked(x, spec))
}

pub(crate) fn quantize_unchecked(x: &Vector, spec: &QuantizerSpec) -> Vector {
    Vector::from_iterator(
        x.len(),
        x.iter()
            .zip(spec.delta.iter())
            .map(|(&xi, &d)| quantize_scalar(xi, d)),
    )
}

/// Ψ(x) = q(x) − x.
pub fn psi(x: &Vector, spec: &QuantizerSpec) -> Result<Vector> {
    Ok(quantize(x, spec)? - x)
}

/// vᵀS1v − ΔᵀS1Δ ≤ 0 up to a 1e-12 relative slack.
///
/// `s1` holds the diagonal of S1. Mismatched dimensions yield `false`.
pub fn check_sector_bound(v: &Vector, spec: &QuantizerSpec, s1: &Vector) -> bool {
    if v.len() != spec.dim() || s1.len() != spec.dim() {
        return false;
    }
    let lhs: f64 = v.iter().zip(s1.iter()).map(|(vi, si)| si * vi * vi).sum();
    let rhs: f64 = spec
        .delta
        .iter()
        .zip(s1.iter())
        .map(|(d, si)| si * d * d)
        .sum();
    lhs - rhs <= SECTOR_SLACK * rhs.max(1.0)
}

/// vᵀS2(v + z) ≤ 0 up to a 1e-12 relative slack.
///
/// `s2` holds the diagonal of S2. Mismatched dimensions yield `false`.
pub fn check_sector_deadzone(v: &Vector, z: &Vector, s2: &Vector) -> bool {
    if v.len() != z.len() || s2.len() != z.len() {
        return false;
    }
    let mut value = 0.0;
    let mut scale = 0.0;
    for i in 0..v.len() {
        let term = s2[i] * v[i] * (v[i] + z[i]);
        value += term;
        scale += (s2[i] * v[i] * (v[i].abs() + z[i].abs())).abs();
    }
    value <= SECTOR_SLACK * scale.max(1.0)
}

/// Closed interval [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Grid index k if |x| ≥ δ and x lies within 1e-9·δ of kδ.
fn discontinuity_index(x: f64, d: f64) -> Option<f64> {
    let k = (x / d).round();
    if k != 0.0 && (x - k * d).abs() <= GRID_TOL * d {
        Some(k)
    } else {
        None
    }
}

/// Componentwise Krasovskii regularization of Ψ at x.
///
/// At discontinuity points xᵢ = kδᵢ (|k| ≥ 1) the interval joins the two
/// one-sided limits of Ψᵢ; elsewhere it is the singleton {Ψᵢ(x)}.
pub fn krasovskii_hull(x: &Vector, spec: &QuantizerSpec) -> Result<Vec<Interval>> {
    spec.check(x)?;
    Ok(x.iter()
        .zip(spec.delta.iter())
        .map(|(&xi, &d)| match discontinuity_index(xi, d) {
            Some(k) if k > 0.0 => Interval {
                lo: (k - 1.0) * d - xi,
                hi: k * d - xi,
            },
            Some(k) => Interval {
                lo: k * d - xi,
                hi: (k + 1.0) * d - xi,
            },
            None => Interval::point(quantize_scalar(xi, d) - xi),
        })
        .collect())
}

/// Minimizer of ‖c + M v‖₂ over the box and the attained residual.
pub fn box_least_squares(c: &Vector, m: &Matrix, bx: &[Interval]) -> (Vector, f64) {
    let n = bx.len();
    let free: Vec<usize> = (0..n).filter(|&i| !bx[i].is_singleton()).collect();
    if free.len() <= 4 {
        box_ls_enumerate(c, m, bx, &free)
    } else {
        box_ls_projected(c, m, bx)
    }
}

/// Exact bounded least squares: every optimum has each coordinate at its
/// lower bound, upper bound, or unconstrained-stationary, so enumerating the
/// 3^k patterns and keeping the best box-feasible candidate is exact.
fn box_ls_enumerate(c: &Vector, m: &Matrix, bx: &[Interval], free: &[usize]) -> (Vector, f64) {
    let n = bx.len();
    let base = Vector::from_iterator(n, bx.iter().map(|iv| iv.lo));
    let mut best = (base.clone(), (c + m * &base).norm());
    let k = free.len();
    let total = 3usize.pow(k as u32);
    for code in 0..total {
        let mut v = base.clone();
        let mut unk = Vec::new();
        let mut rem = code;
        for &i in free {
            match rem % 3 {
                0 => v[i] = bx[i].lo,
                1 => v[i] = bx[i].hi,
                _ => {
                    v[i] = 0.0;
                    unk.push(i);
                }
            }
            rem /= 3;
        }
        if !unk.is_empty() {
            let r = c + m * &v;
            let sub = Matrix::from_fn(m.nrows(), unk.len(), |row, j| m[(row, unk[j])]);
            let Ok(sol) = sub.svd(true, true).solve(&(-r), 1e-12) else {
                continue;
            };
            let tol = 1e-12 * (1.0 + sol.amax());
            if unk
                .iter()
                .zip(sol.iter())
                .any(|(&i, &s)| !bx[i].contains(s, tol))
            {
                continue;
            }
            for (&i, &s) in unk.iter().zip(sol.iter()) {
                v[i] = bx[i].clamp(s);
            }
        }
        let res = (c + m * &v).norm();
        if res < best.1 {
            best = (v, res);
        }
    }
    best
}

/// Projected gradient with a Lipschitz step; used only beyond four free axes.
fn box_ls_projected(c: &Vector, m: &Matrix, bx: &[Interval]) -> (Vector, f64) {
    let n = bx.len();
    let mut v = Vector::from_iterator(n, bx.iter().map(|iv| 0.5 * (iv.lo + iv.hi)));
    let mtm = m.transpose() * m;
    let lip = crate::linalg::spectral_norm(&mtm).max(1e-300);
    for _ in 0..20_000 {
        let grad = m.transpose() * (c + m * &v);
        let next = Vector::from_iterator(n, (0..n).map(|i| bx[i].clamp(v[i] - grad[i] / lip)));
        let step = (&next - &v).amax();
        v = next;
        if step <= 1e-15 * (1.0 + v.amax()) {
            break;
        }
    }
    let res = (c + m * &v).norm();
    (v, res)
}

/// Whether 0 ∈ (A+BK)x + BK·H(x), H the Krasovskii hull of Ψ at x, with the
/// residual min ‖(A+BK)x + BKv‖₂ over v ∈ H(x) at most `tol`.
///
/// Returns `false` on inconsistent dimensions.
pub fn is_krasovskii_equilibrium(
    x: &Vector,
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
    tol: f64,
) -> bool {
    equilibrium_residual(x, sys, k, spec)
        .map(|r| r <= tol)
        .unwrap_or(false)
}

/// min over v in the hull of ‖(A+BK)x + BKv‖₂.
pub fn equilibrium_residual(
    x: &Vector,
    sys: &LtiSystem,
    k: &Matrix,
    spec: &QuantizerSpec,
) -> Result<f64> {
    if x.len() != sys.n() || spec.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "state has {} entries, plant {} states, quantizer {} axes",
            x.len(),
            sys.n(),
            spec.dim()
        )));
    }
    let acl = sys.closed_loop(k)?;
    let bk = sys.b() * k;
    let hull = krasovskii_hull(x, spec)?;
    let c = acl * x;
    Ok(box_least_squares(&c, &bk, &hull).1)
}
