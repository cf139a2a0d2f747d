#![allow(dead_code)]

use qattractor::linalg::{care_solve, is_stabilizable, spectrum};
use qattractor::{LtiSystem, Matrix, QuantizerSpec, SymMatrix};
use rand::Rng;

/// Random stabilizable plant with its LQR gain (Q = I, R = I) and a random
/// quantizer with steps in [0.1, 1].
pub fn random_loop<R: Rng>(rng: &mut R, n: usize, m: usize) -> (LtiSystem, Matrix, QuantizerSpec) {
    loop {
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
        let b = Matrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        if !is_stabilizable(&a, &b) {
            continue;
        }
        let Ok(k) = care_solve(&a, &b, &SymMatrix::identity(n), &SymMatrix::identity(m)) else {
            continue;
        };
        if !spectrum(&(&a + &b * &k)).unwrap().is_hurwitz {
            continue;
        }
        let delta = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        return (
            LtiSystem::new(a, b).unwrap(),
            k,
            QuantizerSpec::new(delta).unwrap(),
        );
    }
}

/// [[He(P·Acl) + τP, PBK − S2], [•, −S1 − 2S2]] assembled entry by entry.
pub fn analysis_block(
    sys: &LtiSystem,
    k: &Matrix,
    tau: f64,
    p: &Matrix,
    s1: &[f64],
    s2: &[f64],
) -> Matrix {
    let n = sys.n();
    let acl = sys.a() + sys.b() * k;
    let pacl = p * &acl;
    let pbk = p * sys.b() * k;
    Matrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => pacl[(i, j)] + pacl[(j, i)] + tau * p[(i, j)],
        (true, false) => pbk[(i, j - n)] - if i == j - n { s2[i] } else { 0.0 },
        (false, true) => pbk[(j, i - n)] - if j == i - n { s2[j] } else { 0.0 },
        (false, false) => {
            if i == j {
                -s1[i - n] - 2.0 * s2[i - n]
            } else {
                0.0
            }
        }
    })
}

pub fn lambda_max(m: &Matrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(s).eigenvalues.max()
}

pub fn two_state() -> (LtiSystem, Matrix, QuantizerSpec) {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.5]);
    let b = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
    let k = Matrix::from_row_slice(1, 2, &[-0.3491, -0.7022]);
    (LtiSystem::new(a, b).unwrap(), k, QuantizerSpec::uniform(2, 1.0).unwrap())
}
