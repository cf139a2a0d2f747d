use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::linalg::Matrix;

/// Structure of a matrix-valued decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric(usize),
    Diagonal(usize),
    Rectangular(usize, usize),
    Scalar,
}

impl VarKind {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(n) | VarKind::Diagonal(n) => (n, n),
            VarKind::Rectangular(r, c) => (r, c),
            VarKind::Scalar => (1, 1),
        }
    }

    /// Number of scalar coordinates.
    pub fn scalar_len(&self) -> usize {
        match *self {
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Diagonal(n) => n,
            VarKind::Rectangular(r, c) => r * c,
            VarKind::Scalar => 1,
        }
    }

    /// Matrix positions set to one by the `local`-th coordinate.
    pub(crate) fn basis(&self, local: usize) -> Vec<(usize, usize)> {
        match *self {
            VarKind::Symmetric(n) => {
                let (i, j) = upper_index(n, local);
                if i == j {
                    vec![(i, i)]
                } else {
                    vec![(i, j), (j, i)]
                }
            }
            VarKind::Diagonal(_) => vec![(local, local)],
            VarKind::Rectangular(_, c) => vec![(local / c, local % c)],
            VarKind::Scalar => vec![(0, 0)],
        }
    }

    /// Label of the `local`-th coordinate, e.g. `(0,1)`.
    pub(crate) fn coord_label(&self, local: usize) -> String {
        match *self {
            VarKind::Scalar => String::new(),
            _ => {
                let (i, j) = self.basis(local)[0];
                format!("({i},{j})")
            }
        }
    }
}

/// Row-major enumeration of the upper triangle.
fn upper_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i;
        if k < row {
            return (i, i + k);
        }
        k -= row;
    }
    unreachable!("coordinate outside the upper triangle")
}

/// Handle to a variable registered with a [`super::ProblemBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) owner: u64,
    pub(crate) id: usize,
    pub(crate) kind: VarKind,
    pub(crate) offset: usize,
}

impl Var {
    pub fn kind(&self) -> VarKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        self.kind.dims()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn coords(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.kind.scalar_len()
    }

    /// Reassembles the variable's matrix from the flat coordinate vector.
    pub(crate) fn assemble(&self, y: &[f64]) -> Matrix {
        let (r, c) = self.dims();
        let mut m = Matrix::zeros(r, c);
        for (local, coord) in self.coords().enumerate() {
            for (i, j) in self.kind.basis(local) {
                m[(i, j)] = y[coord];
            }
        }
        m
    }

    /// Inverse of [`Var::assemble`]; reads the coordinates from a matrix.
    pub(crate) fn scatter(&self, value: &Matrix, y: &mut [f64]) {
        for (local, coord) in self.coords().enumerate() {
            let (i, j) = self.kind.basis(local)[0];
            y[coord] = value[(i, j)];
        }
    }
}

/// Matrix-valued affine function of the decision coordinates,
/// `constant + Σ_k y_k · coeff_k`.
///
/// Arithmetic between expressions of different shapes is a programming
/// error and panics.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    pub(crate) constant: Matrix,
    pub(crate) terms: BTreeMap<usize, Matrix>,
    pub(crate) vars: Vec<Var>,
}

impl AffineExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Matrix::zeros(rows, cols))
    }

    pub fn constant(m: Matrix) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
            vars: Vec::new(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Matrix::from_element(1, 1, v))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Matrix::identity(n, n))
    }

    pub fn var(v: Var) -> Self {
        let (r, c) = v.dims();
        let mut terms = BTreeMap::new();
        for (local, coord) in v.coords().enumerate() {
            let mut m = Matrix::zeros(r, c);
            for (i, j) in v.kind.basis(local) {
                m[(i, j)] = 1.0;
            }
            terms.insert(coord, m);
        }
        Self {
            constant: Matrix::zeros(r, c),
            terms,
            vars: vec![v],
        }
    }

    /// L·V·R for a variable V.
    pub fn product(left: &Matrix, v: Var, right: &Matrix) -> Self {
        Self::var(v).lmul(left).rmul(right)
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn variables(&self) -> &[Var] {
        &self.vars
    }

    pub fn lmul(&self, l: &Matrix) -> Self {
        assert_eq!(l.ncols(), self.rows(), "left factor shape mismatch");
        self.map(|m| l * m)
    }

    pub fn rmul(&self, r: &Matrix) -> Self {
        assert_eq!(self.cols(), r.nrows(), "right factor shape mismatch");
        self.map(|m| m * r)
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// E + Eᵀ.
    pub fn he(&self) -> Self {
        assert_eq!(self.rows(), self.cols(), "He of a non-square expression");
        self.clone() + self.transpose()
    }

    pub fn trace(&self) -> Self {
        assert_eq!(self.rows(), self.cols(), "trace of a non-square expression");
        self.map(|m| Matrix::from_element(1, 1, m.trace()))
    }

    /// Quadratic form wᵀ E w for a constant vector w, as a 1×1 expression.
    pub fn quad(&self, w: &Matrix) -> Self {
        self.lmul(&w.transpose()).rmul(w)
    }

    pub fn eval(&self, y: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (&k, m) in &self.terms {
            if y[k] != 0.0 {
                out += m * y[k];
            }
        }
        out
    }

    fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(&k, m)| (k, f(m))).collect(),
            vars: self.vars.clone(),
        }
    }

    fn absorb_vars(&mut self, other: &[Var]) {
        for v in other {
            if !self.vars.iter().any(|w| w.id == v.id && w.owner == v.owner) {
                self.vars.push(*v);
            }
        }
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;

    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "sum of differently shaped expressions");
        self.constant += &rhs.constant;
        for (k, m) in rhs.terms {
            self.terms
                .entry(k)
                .and_modify(|acc| *acc += &m)
                .or_insert(m);
        }
        self.absorb_vars(&rhs.vars);
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;

    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;

    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;

    fn mul(self, s: f64) -> AffineExpr {
        self.scale(s)
    }
}

impl From<Var> for AffineExpr {
    fn from(v: Var) -> Self {
        AffineExpr::var(v)
    }
}
