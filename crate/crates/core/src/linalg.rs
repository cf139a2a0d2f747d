//! Dense small-matrix numerics: symmetric matrices, spectra, Lyapunov and
//! Riccati solvers.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const SYMMETRY_TOL: f64 = 1e-12;

/// A real symmetric matrix.
///
/// Construction symmetrizes inputs whose relative asymmetry is at most
/// 1e-12 and rejects anything worse.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        ensure_square(&m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        let rel = if scale > 0.0 { asym / scale } else { 0.0 };
        if rel > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: rel });
        }
        Ok(Self::symmetrize(m))
    }

    /// Takes (M + Mᵀ)/2 without any tolerance check.
    pub fn symmetrize(m: Matrix) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &Vector) -> Self {
        SymMatrix(Matrix::from_diagonal(d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vector {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        Vector::from_vec(ev)
    }

    /// Eigenpairs sorted by ascending eigenvalue; columns of the matrix are
    /// unit eigenvectors.
    pub fn eigen_sorted(&self) -> (Vector, Matrix) {
        let eig = SymmetricEigen::new(self.0.clone());
        let n = self.dim();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = Vector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
        let mut vecs = Matrix::zeros(n, n);
        for (k, &i) in idx.iter().enumerate() {
            vecs.set_column(k, &eig.eigenvectors.column(i));
        }
        (vals, vecs)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().max()
    }

    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&(&self.0 * x))
    }
}

impl AsRef<Matrix> for SymMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

pub(crate) fn ensure_square(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// He(M) = M + Mᵀ.
pub fn he(m: &Matrix) -> Result<SymMatrix> {
    ensure_square(m)?;
    Ok(SymMatrix(m + m.transpose()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<Complex<f64>>,
    /// min |Re λ| over the spectrum.
    pub min_abs_real_part: f64,
    pub is_hurwitz: bool,
}

impl SpectrumSummary {
    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn spectrum(m: &Matrix) -> Result<SpectrumSummary> {
    ensure_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SpectrumSummary {
            eigenvalues: vec![],
            min_abs_real_part: f64::INFINITY,
            is_hurwitz: true,
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000 * n.max(1))
        .ok_or(Error::EigenNonConvergence(n))?;
    let mut eigenvalues: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let min_abs_real_part = eigenvalues
        .iter()
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min);
    let is_hurwitz = eigenvalues.iter().all(|z| z.re < 0.0);
    Ok(SpectrumSummary {
        eigenvalues,
        min_abs_real_part,
        is_hurwitz,
    })
}

/// True iff λmin(M) > margin.
pub fn is_positive_definite(m: &SymMatrix, margin: f64) -> bool {
    m.dim() > 0 && m.min_eigenvalue() > margin
}

/// Solves He(Aclᵀ P) = −Q for symmetric P.
///
/// Uses Kronecker vectorization, which is adequate for n up to about 20.
pub fn lyapunov_solve(acl: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    ensure_square(acl)?;
    let n = acl.nrows();
    if q.dim() != n {
        return Err(Error::Dimension(format!(
            "Q is {}x{}, Acl is {n}x{n}",
            q.dim(),
            q.dim()
        )));
    }
    if !is_positive_definite(q, 0.0) {
        return Err(Error::NotPositiveDefinite("Q".into()));
    }
    let spec = spectrum(acl)?;
    if !spec.is_hurwitz {
        return Err(Error::UnstabilizedLoop {
            abscissa: spec.spectral_abscissa(),
        });
    }
    let p = solve_lyapunov_kron(acl, q.as_matrix())?;
    let res = (acl.transpose() * p.as_matrix() + p.as_matrix() * acl + q.as_matrix()).norm();
    if res > 1e-8 * q.as_matrix().norm() {
        // One step of iterative refinement absorbs LU round-off on
        // badly scaled problems.
        let r = acl.transpose() * p.as_matrix() + p.as_matrix() * acl + q.as_matrix();
        let corr = solve_lyapunov_kron(acl, &r)?;
        return Ok(SymMatrix::symmetrize(p.as_matrix() + corr.as_matrix()));
    }
    Ok(p)
}

/// Raw Kronecker solve of Aᵀ P + P A = −Q, no stability check.
fn solve_lyapunov_kron(a: &Matrix, q: &Matrix) -> Result<SymMatrix> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = Matrix::identity(n, n);
    let lhs = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = lhs
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator".into()))?;
    let p = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok(SymMatrix::symmetrize(p))
}

/// LQR gain K = −R⁻¹BᵀX, X the stabilizing solution of
/// AᵀX + XA − XBR⁻¹BᵀX + Q = 0.
///
/// The stable invariant subspace of the Hamiltonian is extracted with the
/// matrix sign function, then the gain is polished by Newton–Kleinman steps.
pub fn care_solve(a: &Matrix, b: &Matrix, q: &SymMatrix, r: &SymMatrix) -> Result<Matrix> {
    care_solution(a, b, q, r).map(|(_, k)| k)
}

/// Same as [`care_solve`] but also returns the Riccati solution X.
pub fn care_solution(
    a: &Matrix,
    b: &Matrix,
    q: &SymMatrix,
    r: &SymMatrix,
) -> Result<(SymMatrix, Matrix)> {
    ensure_square(a)?;
    let n = a.nrows();
    let m = b.ncols();
    if b.nrows() != n || q.dim() != n || r.dim() != m {
        return Err(Error::Dimension(format!(
            "A {n}x{n}, B {}x{}, Q {}x{}, R {}x{}",
            b.nrows(),
            m,
            q.dim(),
            q.dim(),
            r.dim(),
            r.dim()
        )));
    }
    if !is_positive_definite(r, 0.0) {
        return Err(Error::NotPositiveDefinite("R".into()));
    }
    if q.min_eigenvalue() < -1e-12 * q.as_matrix().amax().max(1.0) {
        return Err(Error::InvalidInput("Q must be positive semidefinite".into()));
    }
    let r_inv = r
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R".into()))?
        .inverse();
    let g = b * &r_inv * b.transpose();

    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q.as_matrix()));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let w = matrix_sign(&h).ok_or_else(|| {
        Error::NoStabilizingSolution("Hamiltonian has eigenvalues on the imaginary axis".into())
    })?;

    // Stable subspace spanned by [I; X]: W [I; X] = −[I; X].
    let w11 = w.view((0, 0), (n, n));
    let w12 = w.view((0, n), (n, n));
    let w21 = w.view((n, 0), (n, n));
    let w22 = w.view((n, n), (n, n));
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w22 + Matrix::identity(n, n)));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w11 + Matrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::NoStabilizingSolution(e.to_string()))?;
    let mut x = SymMatrix::symmetrize(x);
    let mut k = -(&r_inv * b.transpose() * x.as_matrix());

    // Newton–Kleinman polishing.
    let q_scale = q.as_matrix().norm().max(1.0);
    for _ in 0..8 {
        let acl = a + b * &k;
        let sp = spectrum(&acl)?;
        if !sp.is_hurwitz {
            return Err(Error::NoStabilizingSolution(format!(
                "closed loop spectral abscissa {:.3e}",
                sp.spectral_abscissa()
            )));
        }
        let res = riccati_residual(a, &g, q.as_matrix(), x.as_matrix());
        if res <= 1e-13 * q_scale.max(x.as_matrix().norm()) {
            break;
        }
        let rhs = q.as_matrix() + k.transpose() * r.as_matrix() * &k;
        let x_next = solve_lyapunov_kron(&acl, &rhs)?;
        let k_next = -(&r_inv * b.transpose() * x_next.as_matrix());
        let res_next = riccati_residual(a, &g, q.as_matrix(), x_next.as_matrix());
        if !(res_next < res) {
            break;
        }
        x = x_next;
        k = k_next;
    }

    let acl = a + b * &k;
    let sp = spectrum(&acl)?;
    if !sp.is_hurwitz {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop spectral abscissa {:.3e}",
            sp.spectral_abscissa()
        )));
    }
    Ok((x, k))
}

pub(crate) fn riccati_residual(a: &Matrix, g: &Matrix, q: &Matrix, x: &Matrix) -> f64 {
    (a.transpose() * x + x * a - x * g * x + q).norm()
}

/// Matrix sign function by the scaled Newton iteration. Returns `None`
/// when the iteration breaks down (eigenvalues on or near the imaginary
/// axis).
fn matrix_sign(h: &Matrix) -> Option<Matrix> {
    let dim = h.nrows();
    let mut z = h.clone();
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let z_inv = lu.try_inverse()?;
        let c = det.abs().powf(1.0 / dim as f64);
        let next = (&z / c + &z_inv * c) * 0.5;
        let diff = (&next - &z).norm();
        let scale = next.norm();
        z = next;
        if !scale.is_finite() {
            return None;
        }
        if diff <= 1e-13 * scale {
            break;
        }
    }
    // Unscaled finishing steps for full accuracy.
    for _ in 0..3 {
        let z_inv = z.clone().try_inverse()?;
        z = (&z + z_inv) * 0.5;
    }
    let check = (&z * &z - Matrix::identity(dim, dim)).norm();
    if check > 1e-6 * dim as f64 {
        return None;
    }
    Some(z)
}

/// Whether (A, B) is stabilizable, decided by the existence of a stabilizing
/// Riccati solution with identity weights.
pub fn is_stabilizable(a: &Matrix, b: &Matrix) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    if m == 0 {
        return spectrum(a).map(|s| s.is_hurwitz).unwrap_or(false);
    }
    care_solve(a, b, &SymMatrix::identity(n), &SymMatrix::identity(m)).is_ok()
}

/// Induced 2-norm.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}
