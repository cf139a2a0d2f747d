use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::expr::{AffineExpr, Var, VarKind};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};

static NEXT_OWNER: AtomicU64 = AtomicU64::new(1);

/// Default relative strictness margin for `≺ 0` and `≻ 0`.
pub const DEFAULT_STRICT_MARGIN: f64 = 1e-7;
/// Floor keeping positive-definite and diagonal variables away from zero.
pub const DEFAULT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConstraint {
    Free,
    PositiveDefinite,
    Nonnegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// F ≺ 0, enforced as F ⪯ −εI.
    NegativeDefinite,
    /// F ⪯ 0.
    NegativeSemidefinite,
    /// F ⪰ 0.
    PositiveSemidefinite,
    /// F ≻ 0, enforced as F ⪰ εI.
    PositiveDefinite,
    /// F = 0.
    Zero,
}

impl Sense {
    pub fn is_strict(&self) -> bool {
        matches!(self, Sense::NegativeDefinite | Sense::PositiveDefinite)
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Sense::NegativeDefinite => "< 0",
            Sense::NegativeSemidefinite => "<= 0",
            Sense::PositiveSemidefinite => ">= 0",
            Sense::PositiveDefinite => "> 0",
            Sense::Zero => "= 0",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub var: Var,
    pub sign: SignConstraint,
}

/// Symmetric block matrix inequality. Only blocks on or above the diagonal
/// are supplied; the lower part is implied by symmetry and missing blocks
/// are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub(crate) name: String,
    pub(crate) sizes: Vec<usize>,
    pub(crate) blocks: BTreeMap<(usize, usize), AffineExpr>,
    pub(crate) sense: Sense,
    pub(crate) margin: Option<f64>,
}

impl LmiConstraint {
    pub fn new(name: impl Into<String>, sizes: &[usize], sense: Sense) -> Self {
        Self {
            name: name.into(),
            sizes: sizes.to_vec(),
            blocks: BTreeMap::new(),
            sense,
            margin: None,
        }
    }

    /// A constraint consisting of a single square expression.
    pub fn single(name: impl Into<String>, expr: AffineExpr, sense: Sense) -> Self {
        let n = expr.rows();
        Self::new(name, &[n], sense).with_block(0, 0, expr)
    }

    /// Scalar constraint lhs ≤ rhs.
    pub fn scalar_le(name: impl Into<String>, lhs: AffineExpr, rhs: f64) -> Self {
        Self::single(name, lhs - AffineExpr::scalar(rhs), Sense::NegativeSemidefinite)
    }

    /// Sets block (i, j). A block below the diagonal is stored transposed
    /// in the mirrored position.
    pub fn with_block(mut self, i: usize, j: usize, expr: AffineExpr) -> Self {
        if i <= j {
            self.blocks.insert((i, j), expr);
        } else {
            self.blocks.insert((j, i), expr.transpose());
        }
        self
    }

    /// Absolute strictness margin overriding the problem default.
    pub fn with_margin(mut self, eps: f64) -> Self {
        self.margin = Some(eps);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub(crate) fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &AffineExpr)> {
        self.blocks.iter()
    }

    fn assemble(&self) -> Result<AffineExpr> {
        let dim: usize = self.sizes.iter().sum();
        if dim == 0 {
            return Err(Error::Dimension(format!("constraint `{}` is empty", self.name)));
        }
        let offsets: Vec<usize> = self
            .sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let mut out = AffineExpr::zeros(dim, dim);
        for (&(i, j), e) in &self.blocks {
            if i >= self.sizes.len() || j >= self.sizes.len() {
                return Err(Error::Dimension(format!(
                    "constraint `{}`: block ({i},{j}) outside a {}-block layout",
                    self.name,
                    self.sizes.len()
                )));
            }
            if e.shape() != (self.sizes[i], self.sizes[j]) {
                return Err(Error::Dimension(format!(
                    "constraint `{}`: block ({i},{j}) is {}x{}, layout expects {}x{}",
                    self.name,
                    e.rows(),
                    e.cols(),
                    self.sizes[i],
                    self.sizes[j]
                )));
            }
            let place = |m: &Matrix, transpose: bool| {
                let mut full = Matrix::zeros(dim, dim);
                if transpose {
                    full.view_mut((offsets[j], offsets[i]), (self.sizes[j], self.sizes[i]))
                        .copy_from(&m.transpose());
                } else {
                    full.view_mut((offsets[i], offsets[j]), (self.sizes[i], self.sizes[j]))
                        .copy_from(m);
                }
                full
            };
            let mut embedded = AffineExpr {
                constant: place(&e.constant, false),
                terms: e.terms.iter().map(|(&k, m)| (k, place(m, false))).collect(),
                vars: e.vars.clone(),
            };
            if i != j {
                embedded = embedded
                    + AffineExpr {
                        constant: place(&e.constant, true),
                        terms: e.terms.iter().map(|(&k, m)| (k, place(m, true))).collect(),
                        vars: e.vars.clone(),
                    };
            }
            out = out + embedded;
        }
        let asym = (&out.constant - out.constant.transpose()).amax()
            + out
                .terms
                .values()
                .map(|m| (m - m.transpose()).amax())
                .fold(0.0, f64::max);
        if asym > 1e-12 * (1.0 + max_abs(&out)) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(out)
    }
}

fn max_abs(e: &AffineExpr) -> f64 {
    e.terms
        .values()
        .map(|m| m.amax())
        .fold(e.constant.amax(), f64::max)
}

/// Objective: minimize `linear − logdet(logdet_arg)`; either part may be
/// absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub(crate) linear: Option<AffineExpr>,
    pub(crate) neg_logdet: Option<AffineExpr>,
}

impl Objective {
    pub fn feasibility() -> Self {
        Self::default()
    }

    /// Minimize a 1×1 affine expression.
    pub fn minimize(expr: AffineExpr) -> Self {
        Self {
            linear: Some(expr),
            neg_logdet: None,
        }
    }

    pub fn minimize_trace(v: Var) -> Self {
        Self::minimize(AffineExpr::var(v).trace())
    }

    /// Minimize −log det(expr).
    pub fn minimize_neg_logdet(expr: impl Into<AffineExpr>) -> Self {
        Self {
            linear: None,
            neg_logdet: Some(expr.into()),
        }
    }

    pub fn is_feasibility(&self) -> bool {
        self.linear.is_none() && self.neg_logdet.is_none()
    }
}

/// Builds an [`SdpProblem`].
#[derive(Debug)]
pub struct ProblemBuilder {
    name: String,
    owner: u64,
    vars: Vec<VarInfo>,
    next_offset: usize,
    constraints: Vec<LmiConstraint>,
    objective: Objective,
    strict_margin: Margin,
    floor: f64,
}

#[derive(Debug, Clone, Copy)]
enum Margin {
    Relative(f64),
    Absolute(f64),
}

impl ProblemBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            owner: NEXT_OWNER.fetch_add(1, Ordering::Relaxed),
            vars: Vec::new(),
            next_offset: 0,
            constraints: Vec::new(),
            objective: Objective::feasibility(),
            strict_margin: Margin::Relative(DEFAULT_STRICT_MARGIN),
            floor: DEFAULT_FLOOR,
        }
    }

    fn register(&mut self, name: impl Into<String>, kind: VarKind, sign: SignConstraint) -> Var {
        let var = Var {
            owner: self.owner,
            id: self.vars.len(),
            kind,
            offset: self.next_offset,
        };
        self.next_offset += kind.scalar_len();
        self.vars.push(VarInfo {
            name: name.into(),
            var,
            sign,
        });
        var
    }

    pub fn symmetric(&mut self, name: impl Into<String>, n: usize, sign: SignConstraint) -> Var {
        self.register(name, VarKind::Symmetric(n), sign)
    }

    pub fn diagonal(&mut self, name: impl Into<String>, n: usize, sign: SignConstraint) -> Var {
        self.register(name, VarKind::Diagonal(n), sign)
    }

    pub fn rectangular(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Var {
        self.register(name, VarKind::Rectangular(rows, cols), SignConstraint::Free)
    }

    pub fn scalar(&mut self, name: impl Into<String>, sign: SignConstraint) -> Var {
        self.register(name, VarKind::Scalar, sign)
    }

    pub fn constrain(&mut self, c: LmiConstraint) -> &mut Self {
        self.constraints.push(c);
        self
    }

    pub fn objective(&mut self, o: Objective) -> &mut Self {
        self.objective = o;
        self
    }

    /// Strict margin ε = rel · max(1, largest constant of the constraint).
    pub fn strict_margin_relative(&mut self, rel: f64) -> &mut Self {
        self.strict_margin = Margin::Relative(rel);
        self
    }

    pub fn strict_margin_absolute(&mut self, eps: f64) -> &mut Self {
        self.strict_margin = Margin::Absolute(eps);
        self
    }

    pub fn floor(&mut self, floor: f64) -> &mut Self {
        self.floor = floor;
        self
    }

    pub fn build(self) -> Result<SdpProblem> {
        for info in &self.vars {
            let (r, c) = info.var.dims();
            if r == 0 || c == 0 {
                return Err(Error::Dimension(format!("variable `{}` is empty", info.name)));
            }
            if info.sign != SignConstraint::Free
                && matches!(info.var.kind, VarKind::Rectangular(..))
            {
                return Err(Error::InvalidInput(format!(
                    "sign constraint on rectangular variable `{}`",
                    info.name
                )));
            }
        }
        if !(self.floor >= 0.0 && self.floor.is_finite()) {
            return Err(Error::InvalidInput("floor must be nonnegative".into()));
        }
        let check_vars = |e: &AffineExpr, ctx: &str| -> Result<()> {
            for v in e.variables() {
                let known = v.owner == self.owner
                    && self.vars.get(v.id).map(|i| i.var == *v).unwrap_or(false);
                if !known {
                    return Err(Error::UndeclaredVariable(format!("id {} in {ctx}", v.id)));
                }
            }
            if e.constant.iter().any(|x| !x.is_finite())
                || e.terms.values().any(|m| m.iter().any(|x| !x.is_finite()))
            {
                return Err(Error::InvalidInput(format!("non-finite coefficient in {ctx}")));
            }
            Ok(())
        };

        let mut compiled = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            for e in c.blocks.values() {
                check_vars(e, &c.name)?;
            }
            compiled.push(c.assemble()?);
        }
        if let Some(l) = &self.objective.linear {
            check_vars(l, "objective")?;
            if l.shape() != (1, 1) {
                return Err(Error::Dimension("linear objective must be 1x1".into()));
            }
        }
        if let Some(g) = &self.objective.neg_logdet {
            check_vars(g, "objective")?;
            if g.rows() != g.cols() || g.rows() == 0 {
                return Err(Error::Dimension("logdet argument must be square".into()));
            }
            let asym = (&g.constant - g.constant.transpose()).amax()
                + g.terms
                    .values()
                    .map(|m| (m - m.transpose()).amax())
                    .fold(0.0, f64::max);
            if asym > 1e-12 * (1.0 + max_abs(g)) {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
        }
        let constraints = self
            .constraints
            .into_iter()
            .zip(compiled)
            .map(|(def, expr)| {
                let margin = if def.sense.is_strict() {
                    def.margin.unwrap_or(match self.strict_margin {
                        Margin::Relative(r) => r * expr.constant.amax().max(1.0),
                        Margin::Absolute(a) => a,
                    })
                } else {
                    0.0
                };
                CompiledConstraint { def, expr, margin }
            })
            .collect();
        let problem = SdpProblem {
            name: self.name,
            vars: self.vars,
            num_coords: self.next_offset,
            constraints,
            objective: self.objective,
            floor: self.floor,
        };
        Ok(problem)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledConstraint {
    pub def: LmiConstraint,
    pub expr: AffineExpr,
    /// Absolute margin ε (zero for non-strict constraints).
    pub margin: f64,
}

/// Validated, immutable SDP.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub(crate) name: String,
    pub(crate) vars: Vec<VarInfo>,
    pub(crate) num_coords: usize,
    pub(crate) constraints: Vec<CompiledConstraint>,
    pub(crate) objective: Objective,
    pub(crate) floor: f64,
}

/// One PSD cone block G(y) = constant + Σ y_k coeff_k ⪰ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock {
    pub label: String,
    pub constant: Matrix,
    pub coeffs: Vec<(usize, Matrix)>,
}

impl PsdBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, y: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (k, m) in &self.coeffs {
            if y[*k] != 0.0 {
                out += m * y[*k];
            }
        }
        out
    }

    fn from_expr(label: String, e: &AffineExpr, sign: f64, shift: f64) -> Self {
        let n = e.rows();
        let constant = &e.constant * sign - Matrix::identity(n, n) * shift;
        let coeffs = e
            .terms
            .iter()
            .filter(|(_, m)| m.amax() > 0.0)
            .map(|(&k, m)| (k, m * sign))
            .collect();
        Self {
            label,
            constant,
            coeffs,
        }
    }
}

/// Primal conic form handed to backends:
/// minimize cᵀy + c0 − Σ logdet(L_j(y)) subject to A y = b and G_i(y) ⪰ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicForm {
    pub num_vars: usize,
    pub c: Vec<f64>,
    pub c0: f64,
    pub blocks: Vec<PsdBlock>,
    pub logdet: Vec<PsdBlock>,
    pub eq_a: Matrix,
    pub eq_b: Vec<f64>,
}

impl SdpProblem {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn variables(&self) -> &[VarInfo] {
        &self.vars
    }

    pub fn constraints(&self) -> &[CompiledConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn num_coords(&self) -> usize {
        self.num_coords
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn var_by_name(&self, name: &str) -> Option<Var> {
        self.vars.iter().find(|v| v.name == name).map(|v| v.var)
    }

    /// Total PSD dimension of the conic form.
    pub fn psd_dimension(&self) -> usize {
        let f = self.conic_form();
        f.blocks.iter().map(|b| b.dim()).sum()
    }

    /// Objective at a coordinate vector; +∞ outside the logdet domain.
    pub fn objective_value(&self, y: &[f64]) -> f64 {
        let mut v = 0.0;
        if let Some(l) = &self.objective.linear {
            v += l.eval(y)[(0, 0)];
        }
        if let Some(g) = &self.objective.neg_logdet {
            match g.eval(y).cholesky() {
                Some(ch) => v -= 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
                None => return f64::INFINITY,
            }
        }
        v
    }

    pub fn conic_form(&self) -> ConicForm {
        let m = self.num_coords;
        let mut blocks = Vec::new();
        let mut eq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for c in &self.constraints {
            let e = &c.expr;
            let label = c.def.name.clone();
            match c.def.sense {
                Sense::NegativeDefinite => blocks.push(PsdBlock::from_expr(label, e, -1.0, c.margin)),
                Sense::NegativeSemidefinite => blocks.push(PsdBlock::from_expr(label, e, -1.0, 0.0)),
                Sense::PositiveSemidefinite => blocks.push(PsdBlock::from_expr(label, e, 1.0, 0.0)),
                Sense::PositiveDefinite => blocks.push(PsdBlock::from_expr(label, e, 1.0, c.margin)),
                Sense::Zero => {
                    let n = e.rows();
                    for i in 0..n {
                        for j in i..n {
                            let mut row = vec![0.0; m];
                            for (&k, mk) in &e.terms {
                                row[k] = mk[(i, j)];
                            }
                            if row.iter().any(|v| *v != 0.0) || e.constant[(i, j)] != 0.0 {
                                eq_rows.push((row, -e.constant[(i, j)]));
                            }
                        }
                    }
                }
            }
        }
        for info in &self.vars {
            let v = info.var;
            let shift = match info.sign {
                SignConstraint::Free => continue,
                SignConstraint::PositiveDefinite => self.floor,
                SignConstraint::Nonnegative => 0.0,
            };
            match v.kind {
                VarKind::Symmetric(_) => {
                    let e = AffineExpr::var(v);
                    blocks.push(PsdBlock::from_expr(format!("{} sign", info.name), &e, 1.0, shift));
                }
                VarKind::Diagonal(_) | VarKind::Scalar => {
                    for (local, coord) in v.coords().enumerate() {
                        blocks.push(PsdBlock {
                            label: format!("{}{} sign", info.name, v.kind.coord_label(local)),
                            constant: Matrix::from_element(1, 1, -shift),
                            coeffs: vec![(coord, Matrix::from_element(1, 1, 1.0))],
                        });
                    }
                }
                VarKind::Rectangular(..) => unreachable!("rejected at build"),
            }
        }
        let mut c = vec![0.0; m];
        let mut c0 = 0.0;
        if let Some(l) = &self.objective.linear {
            c0 = l.constant[(0, 0)];
            for (&k, mk) in &l.terms {
                c[k] = mk[(0, 0)];
            }
        }
        let logdet = self
            .objective
            .neg_logdet
            .iter()
            .map(|g| PsdBlock::from_expr("logdet".into(), g, 1.0, 0.0))
            .collect();
        let eq_a = Matrix::from_fn(eq_rows.len(), m, |i, j| eq_rows[i].0[j]);
        let eq_b = eq_rows.iter().map(|r| r.1).collect();
        ConicForm {
            num_vars: m,
            c,
            c0,
            blocks,
            logdet,
            eq_a,
            eq_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverDiagnostics {
    pub backend: String,
    pub newton_steps: usize,
    pub phase1_steps: usize,
    /// Upper bound on the distance to the optimal value.
    pub gap_bound: f64,
    /// Centering stopped on lack of progress before the gap target.
    pub stalled: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub(crate) values: Option<Vec<f64>>,
    pub objective: f64,
    pub diagnostics: SolverDiagnostics,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Raw coordinate vector, present iff optimal.
    pub fn coordinates(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    /// Value of a variable in its declared structure.
    pub fn value(&self, v: Var) -> Option<Matrix> {
        self.values.as_ref().map(|y| v.assemble(y))
    }

    pub fn sym_value(&self, v: Var) -> Option<SymMatrix> {
        self.value(v).map(SymMatrix::symmetrize)
    }

    pub fn scalar_value(&self, v: Var) -> Option<f64> {
        self.value(v).map(|m| m[(0, 0)])
    }

    /// Builds an optimal-status solution from explicit variable values,
    /// e.g. a known feasible point. Variables not listed are zero.
    pub fn from_values(problem: &SdpProblem, assignments: &[(Var, &Matrix)]) -> Self {
        let mut y = vec![0.0; problem.num_coords];
        for (v, m) in assignments {
            v.scatter(m, &mut y);
        }
        let objective = problem.objective_value(&y);
        Self {
            status: SolveStatus::Optimal,
            values: Some(y),
            objective,
            diagnostics: SolverDiagnostics {
                backend: "assigned".into(),
                ..Default::default()
            },
        }
    }
}
