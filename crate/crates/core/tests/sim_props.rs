mod common;

use common::two_state;
use proptest::prelude::*;
use qattractor::analysis::analyze;
use qattractor::quantizer::{is_krasovskii_equilibrium, quantize};
use qattractor::sim::{
    batch_portrait, circle_states, diagonal_contraction_check, simulate, SimConfig, SimStatus,
};
use qattractor::{AnalysisOptions, ExecMode, LtiSystem, Matrix, QuantizerSpec, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn final_error(h: f64) -> f64 {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
    let sys = LtiSystem::new(a.clone(), Matrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
    let k = Matrix::zeros(1, 2);
    let spec = QuantizerSpec::uniform(2, 0.3).unwrap();
    let x0 = Vector::from_vec(vec![1.0, -0.5]);
    let cfg = SimConfig {
        step: h,
        ..SimConfig::new(x0.clone(), 2.0)
    };
    let t = simulate(&sys, &k, &spec, &cfg, None).unwrap();
    let exact = (a * 2.0).exp() * x0;
    (t.final_state() - exact).norm()
}

#[test]
fn zero_gain_matches_exact_flow_to_fourth_order() {
    let e1 = final_error(0.1);
    let e2 = final_error(0.05);
    let e3 = final_error(0.025);
    let r1 = e1 / e2;
    let r2 = e2 / e3;
    assert!(e3 < 1e-6, "{e3}");
    assert!(r1 > 12.0 && r1 < 20.0, "ratio {r1}");
    assert!(r2 > 12.0 && r2 < 20.0, "ratio {r2}");
}

#[test]
fn certified_ellipsoid_is_entered_and_kept() {
    let (sys, k, spec) = two_state();
    let res = analyze(&sys, &k, &spec, &AnalysisOptions::default()).unwrap();
    let starts = circle_states(8, 60.0, 2);
    let template = SimConfig {
        record_every: 50,
        ..SimConfig::new(Vector::zeros(2), 40.0)
    };
    let portrait = batch_portrait(&sys, &k, &spec, &starts, &template, Some(&res.ellipsoid), ExecMode::default());
    for (x0, s) in starts.iter().zip(&portrait.summaries) {
        let v0 = res.ellipsoid.level(x0);
        assert!(v0 > 1.0);
        let entry = s.entry_time.unwrap_or_else(|| panic!("{x0:?} never entered"));
        assert!(s.max_value_after_entry.unwrap() <= 1.02);
        // Outside E(P), V − 1 decays at least like e^{−τt}.
        let bound = (v0 - 1.0).ln() / res.tau;
        assert!(entry <= 5.0 * bound + 1.0, "entry {entry} vs bound {bound}");
    }
}

#[test]
fn diagonal_start_locks_on_an_equilibrium() {
    let (sys, k, spec) = two_state();
    let cfg = SimConfig::new(Vector::from_vec(vec![5.0, 5.0]), 10.0);
    let t = simulate(&sys, &k, &spec, &cfg, None).unwrap();
    let lock = t.lock.as_ref().expect("trajectory should lock");
    let p = &lock.point;
    assert_eq!(p[0], p[1]);
    assert_eq!(p[0], p[0].round());
    assert!(is_krasovskii_equilibrium(p, &sys, &k, &spec, 1e-9));
    // Once locked the state is frozen.
    assert_eq!(t.final_state(), p);
}

#[test]
fn contraction_identity_on_random_samples() {
    let (sys, k, spec) = two_state();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<Vector> = (0..1000)
        .map(|_| Vector::from_fn(2, |_, _| rng.gen_range(-50.0..50.0)))
        .collect();
    let rep = diagonal_contraction_check(&sys, &k, &spec, &samples).unwrap();
    assert_eq!(rep.samples, 1000);
    assert!(rep.passes(1e-10), "{}", rep.max_discrepancy);
    // The same identity from the plant equations written out by hand.
    for x in &samples {
        let q = quantize(x, &spec).unwrap();
        let u = -0.3491 * q[0] - 0.7022 * q[1];
        let f0 = x[1] + u;
        let f1 = 0.5 * x[0] + 0.5 * x[1] + u;
        let d = x[0] - x[1];
        assert!((d * (f0 - f1) + 0.5 * d * d).abs() <= 1e-10 * (1.0 + d * d));
    }
}

#[test]
fn origin_is_a_fixed_point() {
    let (sys, k, spec) = two_state();
    let t = simulate(&sys, &k, &spec, &SimConfig::new(Vector::zeros(2), 1.0), None).unwrap();
    assert!(t.states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
    assert_eq!(t.status, SimStatus::Completed);
}

#[test]
fn divergence_is_reported() {
    let sys = LtiSystem::new(Matrix::identity(1, 1) * 5.0, Matrix::identity(1, 1)).unwrap();
    let spec = QuantizerSpec::uniform(1, 1.0).unwrap();
    let t = simulate(
        &sys,
        &Matrix::zeros(1, 1),
        &spec,
        &SimConfig::new(Vector::from_vec(vec![1.0]), 100.0),
        None,
    )
    .unwrap();
    assert!(matches!(t.status, SimStatus::Diverged { .. }));
}

#[test]
fn bad_configuration_rejected() {
    let (sys, k, spec) = two_state();
    let mut cfg = SimConfig::new(Vector::zeros(3), 1.0);
    assert!(simulate(&sys, &k, &spec, &cfg, None).is_err());
    cfg.x0 = Vector::zeros(2);
    cfg.step = 0.0;
    assert!(simulate(&sys, &k, &spec, &cfg, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn locks_only_at_krasovskii_equilibria(x in -8.0f64..8.0, y in -8.0f64..8.0) {
        let (sys, k, spec) = two_state();
        let cfg = SimConfig::new(Vector::from_vec(vec![x, y]), 15.0);
        let t = simulate(&sys, &k, &spec, &cfg, None).unwrap();
        if let Some(lock) = &t.lock {
            prop_assert!(is_krasovskii_equilibrium(&lock.point, &sys, &k, &spec, 1e-9 * (1.0 + lock.point.amax())));
        }
    }
}
