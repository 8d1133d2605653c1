mod common;

use control_landscape::certify::{
    certify, certify_trig, controllability_rank, kalman_matrix, local_margin, margin_numerator, trajectory_kalman_check,
};
use control_landscape::{endpoint_map, IntegratorConfig, NonlinearSystem, TrigSystem};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `min_λ ‖AB − λB‖ / ‖B‖²` by successively refined grid search.
fn brute_force_margin(a: &Matrix2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = a * b;
    let obj = |l: f64| (ab - b * l).norm();
    let (mut lo, mut hi) = (-10.0, 10.0);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..12 {
        let step = (hi - lo) / 200.0;
        for i in 0..=200 {
            let l = lo + step * i as f64;
            let v = obj(l);
            if v < best.0 {
                best = (v, l);
            }
        }
        lo = best.1 - 2.0 * step;
        hi = best.1 + 2.0 * step;
    }
    best.0 / b.norm_squared()
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Matrix2<f64>, Vector2<f64>) {
    let a = Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let b = Vector2::from_fn(|_, _| rng.random_range(-1.0..1.0));
    (a, b)
}

#[test]
fn closed_form_margin_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let (a, b) = random_pair(&mut rng);
        let closed = local_margin(&a, &b).unwrap();
        let brute = brute_force_margin(&a, &b);
        assert!((closed - brute).abs() < 1e-6, "{closed} vs {brute}");
    }
}

#[test]
fn documented_margin_cases() {
    let a = Matrix2::new(0.0, 1.0, 0.0, 0.0);
    let b = Vector2::new(0.0, 1.0);
    assert!((margin_numerator(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    assert!((local_margin(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    assert!((brute_force_margin(&a, &b) - 1.0).abs() < 1e-9);
    assert_eq!(local_margin(&Matrix2::identity(), &Vector2::new(0.3, -2.0)).unwrap(), 0.0);
    assert!(local_margin(&a, &Vector2::zeros()).is_err());
}

#[test]
fn kalman_columns_by_repeated_multiplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = kalman_matrix(
        &DMatrix::from_fn(4, 4, |i, j| a[i][j]),
        &DVector::from_vec(b.clone()),
    );
    let mut col = b;
    for j in 0..4 {
        for i in 0..4 {
            assert!((k[(i, j)] - col[i]).abs() < 1e-14);
        }
        col = common::matvec(&a, &col);
    }
}

#[test]
fn certify_documented_systems() {
    let uncontrollable = certify_trig(&TrigSystem::linear([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0]));
    assert!(!uncontrollable.controllable_linear_part);
    assert_eq!(uncontrollable.kalman_rank, 1);
    assert!(!uncontrollable.all_passed());

    let strong = TrigSystem {
        c1: [[10.0, 0.0], [0.0, 10.0]],
        ..TrigSystem::linear([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0])
    };
    let r = certify_trig(&strong);
    assert!((r.df_bound.unwrap() - 10.0 * 2f64.sqrt()).abs() < 1e-12);
    assert!(!r.local_controllability_certified);

    for seed in 0..20 {
        let r = certify_trig(&common::random_certified(seed));
        assert!(r.all_passed());
        assert_eq!(r.controllable_linear_part, r.kalman_rank == r.dim);
        assert_eq!(r.norm, "spectral");
    }
}

#[test]
fn certified_systems_pass_along_trajectories() {
    for seed in 0..10 {
        let sys = common::random_certified(seed).to_system();
        for c in 0..3 {
            let w = common::random_control(1000 * seed + c, 64, 1.0);
            let traj = endpoint_map(&sys, &[0.0, 0.0], &w, &IntegratorConfig::default()).unwrap().trajectory;
            let check = trajectory_kalman_check(&sys, &traj);
            assert!(check.passed, "seed {seed} control {c}: {check:?}");
            let report = certify(&sys, Some(&traj));
            assert!(report.local_controllability_certified);
        }
    }
}

#[test]
fn linear_systems_along_any_trajectory() {
    let ok = NonlinearSystem::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])).unwrap();
    let bad = NonlinearSystem::linear(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
    let w = common::random_control(5, 16, 1.0);
    for (sys, expected) in [(ok, true), (bad, false)] {
        let traj = endpoint_map(&sys, &[0.2, 0.1], &w, &IntegratorConfig::default()).unwrap().trajectory;
        assert_eq!(trajectory_kalman_check(&sys, &traj).passed, expected);
    }
}

fn pair() -> impl Strategy<Value = (Matrix2<f64>, Vector2<f64>)> {
    (prop::array::uniform4(-1.0..1.0f64), prop::array::uniform2(-1.0..1.0f64))
        .prop_map(|(a, b)| (Matrix2::new(a[0], a[1], a[2], a[3]), Vector2::new(b[0], b[1])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn margin_scale_relations((a, b) in pair(), c in prop::sample::select(vec![0.5, 2.0, 10.0])) {
        prop_assume!(b.norm() > 1e-3);
        let m = margin_numerator(&a, &b).unwrap();
        let mc = margin_numerator(&a, &(b * c)).unwrap();
        prop_assert!((m - mc).abs() < 1e-10);
        let l = local_margin(&a, &b).unwrap();
        prop_assert!((local_margin(&a, &(b * c)).unwrap() - l / c).abs() < 1e-10 * (1.0 + l));
    }

    #[test]
    fn full_rank_pairs_have_positive_margin((a, b) in pair()) {
        let (rank, full) = controllability_rank(&DMatrix::from_fn(2, 2, |i, j| a[(i, j)]), &DVector::from_vec(vec![b[0], b[1]]));
        prop_assert_eq!(full, rank == 2);
        if full {
            prop_assert!(local_margin(&a, &b).unwrap() > 0.0);
        }
    }

    #[test]
    fn eigenvectors_have_zero_margin(l1 in -2.0..2.0f64, l2 in -2.0..2.0f64, theta in 0.0..std::f64::consts::TAU, scale in 0.1..3.0f64) {
        // A = R diag(l1, l2) Rᵀ with B along the first eigenvector.
        let r = Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos());
        let a = r * Matrix2::new(l1, 0.0, 0.0, l2) * r.transpose();
        let b = r.column(0) * scale;
        prop_assert!(local_margin(&a, &b).unwrap() < 1e-12);
    }
}
