//! Batch study over random planar trigonometric systems: rejection-filtered
//! system generation, random goals and random-walk initial controls, one
//! rescued D-MORPH run per `(system, goal, control)` triple, and aggregate
//! outcome statistics.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{controllability_rank, local_margin, trig_df_bound};
use crate::odeint::IntegratorConfig;
use crate::optimize::{optimize_with_rescue, FlowConfig, FlowError, Outcome, RescueConfig, RunRecord};
use crate::seeds::child_seed;
use crate::system::{fidelity, final_state, ControlSignal, Goal, NonlinearSystem, SystemError, TrigSystem};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error("no admissible system after {rejections} rejections")]
    GenerationFailed { rejections: u64 },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Increments of the random-walk initial control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Noise {
    /// Uniform on `(−1, 1)`.
    #[default]
    Uniform,
    /// Standard normal.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n_systems: usize,
    pub n_goals: usize,
    pub n_controls: usize,
    /// Entries of `A` and `B` are uniform on `(−ab_range, ab_range)`.
    pub ab_range: f64,
    /// Entries of `C1, S1, C2, S2` are uniform on `(−trig_range, trig_range)`.
    pub trig_range: f64,
    /// Goal coordinates are uniform on `(−goal_range, goal_range)`.
    pub goal_range: f64,
    pub master_seed: u64,
    /// Control samples `N`.
    pub grid_size: usize,
    /// Final time `T`.
    pub t_final: f64,
    pub initial_state: Vec<f64>,
    pub noise: Noise,
    pub max_rejections: u64,
    pub flow: FlowConfig,
    pub rescue: RescueConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_systems: 100,
            n_goals: 10,
            n_controls: 10,
            ab_range: 1.0,
            trig_range: 0.1,
            goal_range: 2.0,
            master_seed: 0,
            grid_size: 128,
            t_final: 1.0,
            initial_state: vec![0.0, 0.0],
            noise: Noise::Uniform,
            max_rejections: 1_000_000,
            flow: FlowConfig::default(),
            rescue: RescueConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.n_systems == 0 || self.n_goals == 0 || self.n_controls == 0 {
            return bad("counts must be at least 1".into());
        }
        for (name, v) in [
            ("ab_range", self.ab_range),
            ("trig_range", self.trig_range),
            ("goal_range", self.goal_range),
            ("t_final", self.t_final),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.grid_size < 2 {
            return bad("grid_size must be at least 2".into());
        }
        if self.initial_state.len() != 2 {
            return bad("initial_state must be planar".into());
        }
        self.flow.validate()?;
        Ok(())
    }

    pub fn total_runs(&self) -> usize {
        self.n_systems * self.n_goals * self.n_controls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSystem {
    pub system: TrigSystem,
    /// Candidates discarded before this one was accepted.
    pub rejections: u64,
}

fn uniform_matrix<R: Rng>(rng: &mut R, range: f64) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 2]; 2];
    for v in m.iter_mut().flatten() {
        *v = rng.random_range(-range..range);
    }
    m
}

/// Whether a candidate passes the filter: full Kalman rank and
/// `√2(‖C1‖ + ‖S1‖ + 2‖C2‖ + 2‖S2‖) < m(A,B)/‖B‖`.
pub fn admissible(sys: &TrigSystem) -> bool {
    let s = sys.to_system();
    let (_, controllable) = controllability_rank(s.a(), s.b());
    controllable
        && local_margin(&sys.a_matrix(), &sys.b_vector()).is_ok_and(|margin| trig_df_bound(sys) < margin)
}

/// Draws candidate systems until one passes [`admissible`].
pub fn generate_system<R: Rng>(rng: &mut R, config: &ProtocolConfig) -> Result<GeneratedSystem, ExperimentError> {
    let mut rejections = 0u64;
    loop {
        let a = uniform_matrix(rng, config.ab_range);
        let b = [
            rng.random_range(-config.ab_range..config.ab_range),
            rng.random_range(-config.ab_range..config.ab_range),
        ];
        let system = TrigSystem {
            a,
            b,
            c1: uniform_matrix(rng, config.trig_range),
            s1: uniform_matrix(rng, config.trig_range),
            c2: uniform_matrix(rng, config.trig_range),
            s2: uniform_matrix(rng, config.trig_range),
        };
        if admissible(&system) {
            return Ok(GeneratedSystem { system, rejections });
        }
        rejections += 1;
        if rejections > config.max_rejections {
            return Err(ExperimentError::GenerationFailed { rejections });
        }
    }
}

/// Running sums of the increments, on the uniform grid over `[0, T]`.
pub fn prefix_sum_control(increments: &[f64], t_final: f64) -> Result<ControlSignal, SystemError> {
    let samples = increments
        .iter()
        .scan(0.0, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect();
    ControlSignal::new(t_final, samples)
}

/// Cumulative sum of `n` white-noise draws: a smoothed random initial control.
pub fn generate_initial_control<R: Rng>(
    rng: &mut R,
    n: usize,
    t_final: f64,
    noise: Noise,
) -> Result<ControlSignal, SystemError> {
    let draws: Vec<f64> = (0..n)
        .map(|_| match noise {
            Noise::Uniform => rng.random_range(-1.0..1.0),
            Noise::Gaussian => rng.sample(StandardNormal),
        })
        .collect();
    prefix_sum_control(&draws, t_final)
}

pub fn generate_goals<R: Rng>(rng: &mut R, n: usize, range: f64) -> Vec<Goal> {
    (0..n)
        .map(|_| Goal(vec![rng.random_range(-range..range), rng.random_range(-range..range)]))
        .collect()
}

// Stream tags keep system, goal, control and run randomness independent.
const SYSTEM_STREAM: u64 = 0;
const GOAL_STREAM: u64 = 1;
const CONTROL_STREAM: u64 = 2;
const RUN_STREAM: u64 = 3;

/// Generates system `i` of the batch exactly as [`run_batch`] does.
pub fn batch_system(config: &ProtocolConfig, i: usize) -> Result<GeneratedSystem, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(config.master_seed, &[SYSTEM_STREAM, i as u64]));
    generate_system(&mut rng, config)
}

pub fn batch_goals(config: &ProtocolConfig, i: usize) -> Vec<Goal> {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(config.master_seed, &[GOAL_STREAM, i as u64]));
    generate_goals(&mut rng, config.n_goals, config.goal_range)
}

pub fn batch_control(config: &ProtocolConfig, index: [usize; 3]) -> Result<ControlSignal, SystemError> {
    let [i, j, k] = index.map(|v| v as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(config.master_seed, &[CONTROL_STREAM, i, j, k]));
    generate_initial_control(&mut rng, config.grid_size, config.t_final, config.noise)
}

pub fn run_seed(config: &ProtocolConfig, index: [usize; 3]) -> u64 {
    let [i, j, k] = index.map(|v| v as u64);
    child_seed(config.master_seed, &[RUN_STREAM, i, j, k])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total_runs: usize,
    pub n_converged: usize,
    pub n_timed_out: usize,
    pub n_precision_stall: usize,
    pub n_trap_suspected: usize,
    pub n_aborted: usize,
    pub pct_converged: f64,
    pub pct_timed_out: f64,
    pub pct_precision_stall: f64,
    pub pct_trap_suspected: f64,
    pub pct_aborted: f64,
    /// Runs whose first flow phase reached the goal without any rescue.
    pub n_converged_directly: usize,
    pub pct_converged_directly: f64,
    pub n_direct_timed_out: usize,
    pub n_direct_precision_stall: usize,
    /// Hill-climbing interventions that raised the fidelity.
    pub stall_rescues: usize,
    /// Hill-climbing interventions in total.
    pub rescue_attempts: usize,
    pub systems: usize,
    pub total_rejections: u64,
    /// Fraction of drawn candidate systems that passed the filter.
    pub filter_acceptance_rate: f64,
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

impl BatchSummary {
    pub fn from_records(records: &[RunRecord], systems: &[GeneratedSystem]) -> Self {
        let total = records.len();
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
        let direct = |o: Outcome| records.iter().filter(|r| r.direct_outcome == o).count();
        let (n_converged, n_timed_out, n_precision_stall, n_trap_suspected, n_aborted) = (
            count(Outcome::Converged),
            count(Outcome::TimedOut),
            count(Outcome::PrecisionStall),
            count(Outcome::TrapSuspected),
            count(Outcome::Aborted),
        );
        let rescues = records.iter().flat_map(|r| &r.rescues);
        let total_rejections: u64 = systems.iter().map(|s| s.rejections).sum();
        let drawn = total_rejections + systems.len() as u64;
        Self {
            total_runs: total,
            n_converged,
            n_timed_out,
            n_precision_stall,
            n_trap_suspected,
            n_aborted,
            pct_converged: pct(n_converged, total),
            pct_timed_out: pct(n_timed_out, total),
            pct_precision_stall: pct(n_precision_stall, total),
            pct_trap_suspected: pct(n_trap_suspected, total),
            pct_aborted: pct(n_aborted, total),
            n_converged_directly: direct(Outcome::Converged),
            pct_converged_directly: pct(direct(Outcome::Converged), total),
            n_direct_timed_out: direct(Outcome::TimedOut),
            n_direct_precision_stall: direct(Outcome::PrecisionStall),
            stall_rescues: rescues.clone().filter(|e| e.delta_fidelity > 0.0).count(),
            rescue_attempts: rescues.count(),
            systems: systems.len(),
            total_rejections,
            filter_acceptance_rate: if drawn == 0 { 0.0 } else { systems.len() as f64 / drawn as f64 },
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("converged", self.n_converged, self.pct_converged),
            ("timed out", self.n_timed_out, self.pct_timed_out),
            ("precision stall", self.n_precision_stall, self.pct_precision_stall),
            ("trap suspected", self.n_trap_suspected, self.pct_trap_suspected),
            ("aborted", self.n_aborted, self.pct_aborted),
            ("converged directly", self.n_converged_directly, self.pct_converged_directly),
        ];
        s.push_str(&format!("{:<20} {:>7} {:>8}\n", "outcome", "runs", "%"));
        for (name, n, p) in rows {
            s.push_str(&format!("{name:<20} {n:>7} {p:>8.2}\n"));
        }
        s.push_str(&format!(
            "total runs {}, rescues {}/{} improved, filter acceptance {:.3}\n",
            self.total_runs, self.stall_rescues, self.rescue_attempts, self.filter_acceptance_rate
        ));
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub systems: Vec<GeneratedSystem>,
    pub records: Vec<RunRecord>,
    pub summary: BatchSummary,
}

/// Runs every `(system, goal, control)` triple on a pool of `jobs` workers
/// (all cores when `None`). Records are sorted by index, so the output does
/// not depend on scheduling.
pub fn run_batch(config: &ProtocolConfig, jobs: Option<usize>) -> Result<BatchResult, ExperimentError> {
    config.validate()?;
    let systems = (0..config.n_systems)
        .map(|i| batch_system(config, i))
        .collect::<Result<Vec<_>, _>>()?;
    let prepared: Vec<(NonlinearSystem, Vec<Goal>)> = systems
        .iter()
        .enumerate()
        .map(|(i, g)| (g.system.to_system(), batch_goals(config, i)))
        .collect();
    let indices: Vec<[usize; 3]> = (0..config.n_systems)
        .flat_map(|i| (0..config.n_goals).flat_map(move |j| (0..config.n_controls).map(move |k| [i, j, k])))
        .collect();

    let run_one = |index: [usize; 3]| -> Result<RunRecord, ExperimentError> {
        let (sys, goals) = &prepared[index[0]];
        let w0 = batch_control(config, index)?;
        let seed = run_seed(config, index);
        let mut rec = optimize_with_rescue(
            sys,
            &config.initial_state,
            &w0,
            &goals[index[1]],
            &config.flow,
            &config.rescue,
            seed,
        )?;
        rec.index = Some(index);
        log::debug!("run {index:?}: {:?} at distance {:.3e}", rec.outcome, rec.final_distance);
        Ok(rec)
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let mut records = pool.install(|| indices.par_iter().map(|&ix| run_one(ix)).collect::<Result<Vec<_>, _>>())?;
    records.sort_by_key(|r| r.index);
    let summary = BatchSummary::from_records(&records, &systems);
    Ok(BatchResult {
        systems,
        records,
        summary,
    })
}

/// Writes `summary.json`, `systems.json`, `records.jsonl` and
/// `curves/run_<i>_<j>_<k>.csv` under `dir`.
pub fn write_batch(dir: &Path, result: &BatchResult) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir.join("curves"))?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)? + "\n")?;
    fs::write(dir.join("systems.json"), serde_json::to_string_pretty(&result.systems)? + "\n")?;
    let mut lines = BufWriter::new(fs::File::create(dir.join("records.jsonl"))?);
    for rec in &result.records {
        serde_json::to_writer(&mut lines, rec)?;
        lines.write_all(b"\n")?;
    }
    lines.flush()?;
    for rec in &result.records {
        let [i, j, k] = rec.index.unwrap_or_default();
        let file = fs::File::create(dir.join("curves").join(format!("run_{i}_{j}_{k}.csv")))?;
        rec.write_curve_csv(BufWriter::new(file))?;
    }
    Ok(())
}

/// Fidelity over the plane `a·φ₁ + b·φ₂` of control space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Row-major over `(a, b)`; `None` where the integration failed.
    pub phi: Vec<Option<f64>>,
}

impl LandscapeGrid {
    pub fn value(&self, ia: usize, ib: usize) -> Option<f64> {
        self.phi[ia * self.b.len() + ib]
    }

    /// Largest sampled fidelity and its `(a, b)` location.
    pub fn max(&self) -> Option<(f64, f64, f64)> {
        let mut best: Option<(f64, f64, f64)> = None;
        for (ia, &a) in self.a.iter().enumerate() {
            for (ib, &b) in self.b.iter().enumerate() {
                if let Some(v) = self.value(ia, ib) {
                    if best.is_none_or(|(_, _, m)| v > m) {
                        best = Some((a, b, v));
                    }
                }
            }
        }
        best
    }

    /// `a,b,phi` rows; failed cells have an empty `phi`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["a", "b", "phi"])?;
        for (ia, a) in self.a.iter().enumerate() {
            for (ib, b) in self.b.iter().enumerate() {
                let phi = self.value(ia, ib).map(|v| v.to_string()).unwrap_or_default();
                wtr.write_record([a.to_string(), b.to_string(), phi])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (range.0 + range.1)],
        _ => (0..n)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Evaluates `Φ(a·φ₁ + b·φ₂)` on a `resolution.0 × resolution.1` grid.
/// A resolution of 1 along an axis samples the midpoint of its range.
#[allow(clippy::too_many_arguments)]
pub fn landscape_grid(
    sys: &NonlinearSystem,
    x0: &[f64],
    goal: &Goal,
    basis: (&ControlSignal, &ControlSignal),
    a_range: (f64, f64),
    b_range: (f64, f64),
    resolution: (usize, usize),
    config: &IntegratorConfig,
) -> Result<LandscapeGrid, ExperimentError> {
    let (p1, p2) = basis;
    if p1.len() != p2.len() || p1.t_final() != p2.t_final() {
        return Err(ExperimentError::InvalidConfig("basis signals must share a grid".into()));
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let (s1, s2) = (p1.samples(), p2.samples());
    let gram = dot(s1, s1) * dot(s2, s2) - dot(s1, s2).powi(2);
    if !(gram > 1e-12 * dot(s1, s1) * dot(s2, s2)) {
        return Err(ExperimentError::InvalidConfig("basis signals must be linearly independent".into()));
    }
    let (a, b) = (axis(a_range, resolution.0), axis(b_range, resolution.1));
    let cells: Vec<(f64, f64)> = a.iter().flat_map(|&ai| b.iter().map(move |&bi| (ai, bi))).collect();
    let phi = cells
        .par_iter()
        .map(|&(ai, bi)| {
            let samples = s1.iter().zip(s2).map(|(u, v)| ai * u + bi * v).collect();
            let w = p1.with_samples(samples).ok()?;
            final_state(sys, x0, &w, config).ok().map(|x| fidelity(&x, goal))
        })
        .collect();
    Ok(LandscapeGrid { a, b, phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::certify_trig;

    #[test]
    fn prefix_sums() {
        let w = prefix_sum_control(&[0.5, -0.2, 0.1], 1.0).unwrap();
        let expected = [0.5, 0.3, 0.4];
        for (a, b) in w.samples().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn generation_is_deterministic_and_certified() {
        let cfg = ProtocolConfig::default();
        let a = generate_system(&mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        let b = generate_system(&mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(certify_trig(&a.system).all_passed());
    }

    #[test]
    fn impossible_filter_fails_cleanly() {
        let cfg = ProtocolConfig {
            trig_range: 50.0,
            max_rejections: 100,
            ..Default::default()
        };
        let err = generate_system(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap_err();
        assert!(matches!(err, ExperimentError::GenerationFailed { rejections: 101 }));
    }

    #[test]
    fn initial_control_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = generate_initial_control(&mut rng, 64, 2.0, Noise::Uniform).unwrap();
        assert_eq!(w.len(), 64);
        assert_eq!(w.t_final(), 2.0);
        let steps: Vec<f64> = w.samples().windows(2).map(|p| p[1] - p[0]).collect();
        assert!(steps.iter().all(|d| d.abs() < 1.0));
        assert!(w.samples()[0].abs() < 1.0);
        let g = generate_initial_control(&mut rng, 8, 1.0, Noise::Gaussian).unwrap();
        assert_eq!(g.len(), 8);
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::default().validate().is_ok());
        let cfg = ProtocolConfig { n_goals: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ProtocolConfig { goal_range: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let json = r#"{"n_systems": 2, "typo_field": 1}"#;
        assert!(serde_json::from_str::<ProtocolConfig>(json).is_err());
    }

    #[test]
    fn summary_partitions_outcomes() {
        let w = ControlSignal::constant(1.0, 2, 0.0).unwrap();
        let rec = |o: Outcome| RunRecord {
            index: None,
            seed: 0,
            fidelity_curve: vec![],
            outcome: o,
            direct_outcome: o,
            final_distance: 1.0,
            control_final: w.clone(),
            wall_iterations: 0,
            rescues: vec![],
            diagnostic: None,
        };
        let records = vec![
            rec(Outcome::Converged),
            rec(Outcome::Converged),
            rec(Outcome::TimedOut),
            rec(Outcome::PrecisionStall),
            rec(Outcome::Aborted),
            rec(Outcome::TrapSuspected),
        ];
        let s = BatchSummary::from_records(&records, &[]);
        let total = s.pct_converged + s.pct_timed_out + s.pct_precision_stall + s.pct_trap_suspected + s.pct_aborted;
        assert!((total - 100.0).abs() < 1e-9);
        assert_eq!(s.n_converged + s.n_timed_out + s.n_precision_stall + s.n_trap_suspected + s.n_aborted, 6);
        assert!(s.table().contains("trap suspected"));
    }

    #[test]
    fn degenerate_basis_is_rejected() {
        let sys = TrigSystem::linear([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0]).to_system();
        let p = ControlSignal::constant(1.0, 8, 1.0).unwrap();
        let q = ControlSignal::constant(1.0, 8, 2.0).unwrap();
        let goal = Goal(vec![0.0, 0.0]);
        let r = landscape_grid(&sys, &[0.0, 0.0], &goal, (&p, &q), (-1.0, 1.0), (-1.0, 1.0), (3, 3), &IntegratorConfig::default());
        assert!(matches!(r, Err(ExperimentError::InvalidConfig(_))));
    }
}
