mod common;

use control_landscape::certify::certify_trig;
use control_landscape::experiment::{
    batch_control, generate_initial_control, generate_system, landscape_grid, run_batch, write_batch, Noise, ProtocolConfig,
};
use control_landscape::system::final_state;
use control_landscape::{fidelity, ControlSignal, Goal, IntegratorConfig, NonlinearSystem, Outcome};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> ProtocolConfig {
    ProtocolConfig {
        n_systems: 2,
        n_goals: 2,
        n_controls: 2,
        master_seed: 99,
        grid_size: 64,
        ..Default::default()
    }
}

#[test]
fn thousand_generated_systems_certify() {
    let cfg = ProtocolConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut rejections = 0;
    for _ in 0..1000 {
        let g = generate_system(&mut rng, &cfg).unwrap();
        rejections += g.rejections;
        let r = certify_trig(&g.system);
        assert!(r.all_passed());
        for v in g.system.a.iter().chain(&g.system.c1).flatten() {
            assert!(v.abs() < 1.0);
        }
    }
    let rate = 1000.0 / (1000 + rejections) as f64;
    assert!(rate > 0.0 && rate <= 1.0);
}

#[test]
fn random_walk_variance_grows_linearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 32;
    let draws = 10_000;
    let mut sum_sq = vec![0.0; n];
    for _ in 0..draws {
        let w = generate_initial_control(&mut rng, n, 1.0, Noise::Uniform).unwrap();
        for (acc, v) in sum_sq.iter_mut().zip(w.samples()) {
            *acc += v * v;
        }
    }
    for (k, s) in sum_sq.iter().enumerate() {
        let var = s / draws as f64;
        let expected = (k + 1) as f64 / 3.0;
        assert!((var - expected).abs() < 0.08 * expected + 0.02, "k = {k}: {var} vs {expected}");
    }
}

#[test]
fn batch_is_deterministic_across_worker_counts() {
    let cfg = small();
    let one = run_batch(&cfg, Some(1)).unwrap();
    let two = run_batch(&cfg, Some(2)).unwrap();
    let ser = |r: &control_landscape::experiment::BatchResult| {
        r.records.iter().map(|x| serde_json::to_string(x).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(ser(&one), ser(&two));
    assert_eq!(one.summary, two.summary);
    assert_eq!(one.records.len(), 8);
    let indices: Vec<_> = one.records.iter().map(|r| r.index.unwrap()).collect();
    let mut sorted = indices.clone();
    sorted.sort();
    assert_eq!(indices, sorted);
    assert_eq!(one.records[3].control_final.len(), 64);
    assert_ne!(batch_control(&cfg, [0, 0, 0]).unwrap(), batch_control(&cfg, [0, 0, 1]).unwrap());
}

#[test]
fn summary_is_consistent_with_records() {
    let result = run_batch(&small(), None).unwrap();
    let s = &result.summary;
    let n = |o: Outcome| result.records.iter().filter(|r| r.outcome == o).count();
    assert_eq!(s.n_converged, n(Outcome::Converged));
    assert_eq!(s.n_trap_suspected, n(Outcome::TrapSuspected));
    let total = s.pct_converged + s.pct_timed_out + s.pct_precision_stall + s.pct_trap_suspected + s.pct_aborted;
    assert!((total - 100.0).abs() < 1e-9);
    assert_eq!(s.rescue_attempts, result.records.iter().map(|r| r.rescues.len()).sum::<usize>());
    for r in &result.records {
        assert_eq!(r.outcome == Outcome::Converged, r.final_distance < 1e-3);
    }
}

#[test]
fn batch_output_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ProtocolConfig { n_systems: 1, n_goals: 1, n_controls: 2, ..small() };
    let result = run_batch(&cfg, Some(1)).unwrap();
    write_batch(dir.path(), &result).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"pct_converged\""));
    let lines = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    let curve = std::fs::read_to_string(dir.path().join("curves/run_0_0_1.csv")).unwrap();
    assert!(curve.starts_with("s,phi\n"));
    let back: control_landscape::RunRecord = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(back, result.records[0]);
}

#[test]
fn drift_only_landscape_is_a_cone() {
    let b = [0.7, -0.4];
    let sys = NonlinearSystem::linear(DMatrix::zeros(2, 2), DVector::from_vec(b.to_vec())).unwrap();
    let phi1 = ControlSignal::constant(1.0, 33, 1.0).unwrap();
    let phi2 = ControlSignal::from_fn(1.0, 33, |t| t * t).unwrap();
    let (c1, c2) = (1.0, 1.0 / 3.0 + 1.0 / (6.0 * 32.0 * 32.0));
    let goal = Goal(vec![0.5, 0.2]);
    let x0 = [0.1, 0.0];
    let grid = landscape_grid(&sys, &x0, &goal, (&phi1, &phi2), (-2.0, 2.0), (-3.0, 3.0), (9, 7), &IntegratorConfig::default()).unwrap();
    for (ia, a) in grid.a.iter().enumerate() {
        for (ib, bb) in grid.b.iter().enumerate() {
            let s = a * c1 + bb * c2;
            let x = [x0[0] + s * b[0], x0[1] + s * b[1]];
            let oracle = -((x[0] - goal.0[0]).powi(2) + (x[1] - goal.0[1]).powi(2)).sqrt();
            assert!((grid.value(ia, ib).unwrap() - oracle).abs() < 1e-8);
        }
    }
}

#[test]
fn single_cell_grid_is_one_endpoint() {
    let sys = common::random_certified(2).to_system();
    let phi1 = common::random_control(1, 32, 1.0);
    let phi2 = common::random_control(2, 32, 1.0);
    let goal = Goal(vec![1.0, 1.0]);
    let cfg = IntegratorConfig::default();
    let grid = landscape_grid(&sys, &[0.0, 0.0], &goal, (&phi1, &phi2), (0.0, 2.0), (-1.0, 0.0), (1, 1), &cfg).unwrap();
    assert_eq!((grid.a.clone(), grid.b.clone()), (vec![1.0], vec![-0.5]));
    let w = phi1.with_samples(phi1.samples().iter().zip(phi2.samples()).map(|(u, v)| u - 0.5 * v).collect()).unwrap();
    let expected = fidelity(&final_state(&sys, &[0.0, 0.0], &w, &cfg).unwrap(), &goal);
    assert_eq!(grid.value(0, 0).unwrap(), expected);
}

#[test]
fn grid_max_agrees_with_refinement() {
    let sys = common::random_certified(6).to_system();
    let phi1 = ControlSignal::constant(1.0, 32, 1.0).unwrap();
    let phi2 = ControlSignal::from_fn(1.0, 32, |t| (std::f64::consts::PI * t).cos()).unwrap();
    let goal = Goal(vec![0.6, -0.3]);
    let cfg = IntegratorConfig::default();
    let run = |n| landscape_grid(&sys, &[0.0, 0.0], &goal, (&phi1, &phi2), (-3.0, 3.0), (-3.0, 3.0), (n, n), &cfg).unwrap();
    let coarse = run(13);
    let fine = run(49);
    let (_, _, cmax) = coarse.max().unwrap();
    let (_, _, fmax) = fine.max().unwrap();
    // The fine grid contains every coarse node.
    assert!(fmax >= cmax - 1e-12);
    // Φ is 1-Lipschitz in x(T); bound the gain from (a, b) to x(T) on the grid.
    let h = 6.0 / 48.0;
    let lip = (0..48)
        .flat_map(|i| (0..48).map(move |j| (i, j)))
        .map(|(i, j)| {
            let v = fine.value(i, j).unwrap();
            (fine.value(i + 1, j).unwrap() - v).abs().max((fine.value(i, j + 1).unwrap() - v).abs()) / h
        })
        .fold(0.0, f64::max);
    let coarse_h = 6.0 / 12.0;
    assert!(fmax - cmax <= lip * coarse_h * std::f64::consts::SQRT_2 / 2.0 + 1e-9, "{fmax} vs {cmax}");
}
