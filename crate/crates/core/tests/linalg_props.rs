use proptest::prelude::*;
use qattractor::linalg::{care_solution, he, is_stabilizable, lyapunov_solve, spectrum};
use qattractor::{Matrix, SymMatrix};

fn square(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| Matrix::from_row_slice(n, n, &v))
}

/// Shifts M left until its Gershgorin discs sit in the open left half plane.
fn hurwitz(m: Matrix) -> Matrix {
    let n = m.nrows();
    let radius = (0..n)
        .map(|i| m[(i, i)] + (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    m - Matrix::identity(n, n) * (radius + 0.1)
}

fn spd(n: usize) -> impl Strategy<Value = SymMatrix> {
    square(n).prop_map(move |m| SymMatrix::symmetrize(m.transpose() * &m + Matrix::identity(n, n) * 0.1))
}

fn rel_fro(r: &Matrix, scale: &Matrix) -> f64 {
    r.norm() / scale.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn he_is_symmetric(m in (1usize..=6).prop_flat_map(square)) {
        let h = he(&m).unwrap();
        prop_assert_eq!(h.as_matrix().clone(), h.as_matrix().transpose());
    }

    #[test]
    fn lyapunov_round_trip((acl, q) in (1usize..=6).prop_flat_map(|n| (square(n).prop_map(hurwitz), spd(n)))) {
        let p = lyapunov_solve(&acl, &q).unwrap();
        let r = acl.transpose() * p.as_matrix() + p.as_matrix() * &acl + q.as_matrix();
        prop_assert!(rel_fro(&r, q.as_matrix()) <= 1e-8, "residual {}", rel_fro(&r, q.as_matrix()));
        prop_assert!(p.min_eigenvalue() > 0.0);
    }

    #[test]
    fn care_stabilizes_and_solves(
        (a, b) in (1usize..=5, 1usize..=3).prop_flat_map(|(n, m)| (
            square(n),
            prop::collection::vec(-2.0f64..2.0, n * m).prop_map(move |v| Matrix::from_row_slice(n, m, &v)),
        ))
    ) {
        prop_assume!(is_stabilizable(&a, &b));
        let n = a.nrows();
        let m = b.ncols();
        let q = SymMatrix::identity(n);
        let r = SymMatrix::identity(m);
        let (x, k) = care_solution(&a, &b, &q, &r).unwrap();
        let xm = x.as_matrix();
        let res = a.transpose() * xm + xm * &a - xm * &b * b.transpose() * xm + q.as_matrix();
        let scale = (a.transpose() * xm).norm() + (xm * &b * b.transpose() * xm).norm() + q.as_matrix().norm();
        prop_assert!(res.norm() / scale <= 1e-7, "riccati residual {}", res.norm() / scale);
        prop_assert!(((&k + b.transpose() * xm).norm()) <= 1e-9 * (1.0 + k.norm()));
        prop_assert!(spectrum(&(a + b * k)).unwrap().is_hurwitz);
    }

    #[test]
    fn spectrum_matches_characteristic_polynomial(m in (2usize..=3).prop_flat_map(square)) {
        // Vieta: elementary symmetric functions of the eigenvalues equal the
        // sums of principal minors.
        let eig = spectrum(&m).unwrap().eigenvalues;
        let n = m.nrows();
        let e1: nalgebra::Complex<f64> = eig.iter().sum();
        let e_n: nalgebra::Complex<f64> = eig.iter().product();
        let trace = m.trace();
        let det = m.determinant();
        prop_assert!((e1.re - trace).abs() <= 1e-9 * (1.0 + trace.abs()));
        prop_assert!(e1.im.abs() <= 1e-9);
        prop_assert!((e_n.re - det).abs() <= 1e-9 * (1.0 + m.norm().powi(n as i32)));
        prop_assert!(e_n.im.abs() <= 1e-9 * (1.0 + m.norm().powi(n as i32)));
        if n == 3 {
            let e2 = eig[0] * eig[1] + eig[0] * eig[2] + eig[1] * eig[2];
            let minors = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)])
                + (m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)])
                + (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)]);
            prop_assert!((e2.re - minors).abs() <= 1e-9 * (1.0 + m.norm().powi(2)));
        } else {
            // Quadratic formula on λ² − tr λ + det.
            let disc = nalgebra::Complex::new(trace * trace - 4.0 * det, 0.0).sqrt();
            let mut roots = [(trace + disc) / 2.0, (trace - disc) / 2.0];
            roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            for (r, e) in roots.iter().zip(&eig) {
                prop_assert!((r - e).norm() <= 1e-9 * (1.0 + m.norm()), "{r} vs {e}");
            }
        }
    }
}

#[test]
fn lyapunov_scalar_closed_form() {
    // 2aP + q = 0
    let p = lyapunov_solve(&Matrix::from_element(1, 1, -0.5), &SymMatrix::identity(1)).unwrap();
    assert!((p.as_matrix()[(0, 0)] - 1.0).abs() < 1e-14);
}

#[test]
fn lqr_double_integrator() {
    // Known closed form: K = −[1, √3].
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (_, k) = care_solution(&a, &b, &SymMatrix::identity(2), &SymMatrix::identity(1)).unwrap();
    assert!((k[(0, 0)] + 1.0).abs() < 1e-9);
    assert!((k[(0, 1)] + 3f64.sqrt()).abs() < 1e-9);
}

#[test]
fn non_stabilizable_pair_detected() {
    let a = Matrix::identity(2, 2);
    let b = Matrix::zeros(2, 1);
    assert!(!is_stabilizable(&a, &b));
    assert!(care_solution(&a, &b, &SymMatrix::identity(2), &SymMatrix::identity(1)).is_err());
}

#[test]
fn asymmetric_input_rejected() {
    let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
    assert!(SymMatrix::new(m).is_err());
    let nearly = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-15, 1.0]);
    assert!(SymMatrix::new(nearly).is_ok());
}
