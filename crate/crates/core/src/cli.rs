//! The `landscape` command line: JSON configuration in, artifacts out.
//!
//! Exit codes: 0 success, 1 input error, 2 certificate failure, 3 runtime
//! failure (including a batch that flags suspected traps).

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::certify;
use crate::experiment::{generate_initial_control, landscape_grid, run_batch, write_batch, ExperimentError, Noise, ProtocolConfig};
use crate::odeint::{DenseOutput, IntegratorConfig};
use crate::optimize::{optimize_with_rescue, FlowConfig, FlowError, Outcome, RescueConfig};
use crate::seeds::child_seed;
use crate::system::{endpoint_map, fidelity, ControlSignal, Goal, SystemError, TrigSystem};

#[derive(Debug, Parser)]
#[command(name = "landscape", version, about = "Control-landscape certificates and D-MORPH optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Certify the trap-freedom conditions of the configured system.
    Check,
    /// Integrate the system under the configured control.
    Simulate,
    /// Run D-MORPH with hill-climbing rescue toward the goal.
    Optimize,
    /// Run the randomized batch study.
    Batch,
    /// Tabulate the fidelity over a plane of controls.
    #[command(name = "landscape-grid")]
    LandscapeGrid,
}

/// Initial control: explicit samples, a constant, or (default) a random walk
/// drawn from the configuration seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "N")]
    pub grid_size: usize,
    pub samples: Option<Vec<f64>>,
    pub constant: Option<f64>,
    pub noise: Noise,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            grid_size: 128,
            samples: None,
            constant: None,
            noise: Noise::Uniform,
        }
    }
}

impl ControlSection {
    pub fn build(&self, seed: u64) -> Result<ControlSignal, SystemError> {
        match (&self.samples, self.constant) {
            (Some(s), _) => ControlSignal::new(self.t_final, s.clone()),
            (None, Some(c)) => ControlSignal::constant(self.t_final, self.grid_size, c),
            (None, None) => {
                let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[2]));
                generate_initial_control(&mut rng, self.grid_size, self.t_final, self.noise)
            }
        }
    }
}

/// Plane `a·φ₁ + b·φ₂` of controls. Without explicit samples the basis is
/// `φ₁ = 1`, `φ₂ = cos(πt/T)` on the control grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSection {
    pub phi1: Option<Vec<f64>>,
    pub phi2: Option<Vec<f64>>,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub resolution: (usize, usize),
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self {
            phi1: None,
            phi2: None,
            a_range: (-5.0, 5.0),
            b_range: (-5.0, 5.0),
            resolution: (41, 41),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: Option<TrigSystem>,
    pub initial_state: Option<Vec<f64>>,
    pub goal: Option<Vec<f64>>,
    pub control: ControlSection,
    pub integrator: IntegratorConfig,
    /// Overrides `protocol.flow` in batch runs when present.
    pub flow: Option<FlowConfig>,
    /// Overrides `protocol.rescue` in batch runs when present.
    pub rescue: Option<RescueConfig>,
    pub protocol: Option<ProtocolConfig>,
    pub landscape: LandscapeSection,
    /// Master seed; also replaces `protocol.master_seed` when present.
    pub seed: Option<u64>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    fn system(&self) -> Result<&TrigSystem, CliError> {
        let sys = self.system.as_ref().ok_or(CliError::Missing("system"))?;
        if !sys.is_finite() {
            return Err(CliError::Invalid("system coefficients must be finite".into()));
        }
        Ok(sys)
    }

    fn initial_state(&self) -> Vec<f64> {
        self.initial_state.clone().unwrap_or_else(|| vec![0.0, 0.0])
    }

    fn goal(&self) -> Result<Goal, CliError> {
        let g = self.goal.clone().ok_or(CliError::Missing("goal"))?;
        Ok(Goal::new(g)?)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("configuration error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("configuration lacks a `{0}` section")]
    Missing(&'static str),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) | CliError::Output(_) => 3,
            _ => 1,
        }
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        match e {
            SystemError::Integration(_) => CliError::Runtime(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::System(s) => s.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidConfig(_) | ExperimentError::GenerationFailed { .. } => CliError::Invalid(e.to_string()),
            ExperimentError::Flow(f) => f.into(),
            ExperimentError::System(s) => s.into(),
            ExperimentError::Io(_) | ExperimentError::Json(_) | ExperimentError::Csv(_) => CliError::Output(e.to_string()),
            ExperimentError::Pool(_) => CliError::Runtime(e.to_string()),
        }
    }
}

fn output<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Output(e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(output)?;
    fs::write(path, text + "\n").map_err(output)
}

/// `t,x0,x1,...` rows of a trajectory.
pub fn write_trajectory_csv(path: &Path, traj: &DenseOutput) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(output)?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["t".to_string()];
    header.extend((0..traj.dim()).map(|i| format!("x{i}")));
    wtr.write_record(&header).map_err(output)?;
    for (t, x) in traj.iter() {
        let row = std::iter::once(t).chain(x.iter().copied()).map(|v| v.to_string());
        wtr.write_record(row).map_err(output)?;
    }
    wtr.flush().map_err(output)
}

/// Runs one subcommand and returns the process exit code.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let path = cli.config.as_ref().ok_or(CliError::Missing("--config"))?;
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.clone(),
        source,
    })?;
    let config = Config::from_json(&text)?;
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    fs::create_dir_all(&cli.out).map_err(output)?;
    match cli.command {
        Command::Check => cmd_check(&config, &cli.out),
        Command::Simulate => cmd_simulate(&config, &cli.out, seed),
        Command::Optimize => cmd_optimize(&config, &cli.out, seed),
        Command::Batch => cmd_batch(&config, &cli.out, cli.seed.or(config.seed), cli.jobs),
        Command::LandscapeGrid => cmd_landscape_grid(&config, &cli.out, cli.jobs),
    }
}

fn cmd_check(config: &Config, out: &Path) -> Result<i32, CliError> {
    let sys = config.system()?.to_system();
    // With a control section, the rank-along-trajectory route is checked too.
    let trajectory = match (&config.control.samples, config.control.constant) {
        (None, None) => None,
        _ => {
            let w = config.control.build(0)?;
            Some(endpoint_map(&sys, &config.initial_state(), &w, &config.integrator)?.trajectory)
        }
    };
    let report = certify(&sys, trajectory.as_ref());
    write_json(&out.join("certificate.json"), &report)?;
    println!("kalman rank            {} of {}", report.kalman_rank, report.dim);
    println!("nonlinear bound        {}", fmt_opt(report.nonlinear_bound));
    println!("local margin m/|B|     {}", fmt_opt(report.local_margin));
    println!("Df bound               {}", fmt_opt(report.df_bound));
    println!("fixed-time controllable {}", report.fixed_time_controllable);
    println!("locally controllable    {}", report.local_controllability_certified);
    println!("unrestricted controls   {}", report.unrestricted_controls);
    Ok(if report.all_passed() { 0 } else { 2 })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"))
}

fn cmd_simulate(config: &Config, out: &Path, seed: u64) -> Result<i32, CliError> {
    let sys = config.system()?.to_system();
    let w = config.control.build(seed)?;
    let end = endpoint_map(&sys, &config.initial_state(), &w, &config.integrator)?;
    write_trajectory_csv(&out.join("trajectory.csv"), &end.trajectory)?;
    let phi = config.goal.as_ref().map(|_| config.goal().map(|g| fidelity(&end.x_final, &g))).transpose()?;
    let summary = serde_json::json!({ "x_final": end.x_final, "fidelity": phi, "control": w });
    write_json(&out.join("endpoint.json"), &summary)?;
    println!("x(T) = {:?}", end.x_final);
    if let Some(phi) = phi {
        println!("fidelity = {phi:.6e}");
    }
    Ok(0)
}

fn cmd_optimize(config: &Config, out: &Path, seed: u64) -> Result<i32, CliError> {
    let sys = config.system()?.to_system();
    let x0 = config.initial_state();
    let goal = config.goal()?;
    let w0 = config.control.build(seed)?;
    let flow = config.flow.unwrap_or_default();
    let rescue = config.rescue.unwrap_or_default();
    let record = optimize_with_rescue(&sys, &x0, &w0, &goal, &flow, &rescue, child_seed(seed, &[3]))?;
    write_json(&out.join("record.json"), &record)?;
    let file = fs::File::create(out.join("fidelity.csv")).map_err(output)?;
    record.write_curve_csv(BufWriter::new(file)).map_err(output)?;
    println!("outcome {:?}, distance {:.3e}, rescues {}", record.outcome, record.final_distance, record.rescues.len());
    if record.outcome == Outcome::Aborted {
        eprintln!("run aborted: {}", record.diagnostic.as_deref().unwrap_or("unknown"));
        return Ok(3);
    }
    let end = endpoint_map(&sys, &x0, &record.control_final, &flow.inner_integrator)?;
    write_trajectory_csv(&out.join("trajectory.csv"), &end.trajectory)?;
    Ok(0)
}

fn cmd_batch(config: &Config, out: &Path, seed: Option<u64>, jobs: Option<usize>) -> Result<i32, CliError> {
    let mut protocol = config.protocol.clone().unwrap_or_default();
    if let Some(s) = seed {
        protocol.master_seed = s;
    }
    if let Some(f) = &config.flow {
        protocol.flow = *f;
    }
    if let Some(r) = config.rescue {
        protocol.rescue = r;
    }
    let result = run_batch(&protocol, jobs)?;
    write_batch(out, &result)?;
    print!("{}", result.summary.table());
    Ok(if result.summary.n_trap_suspected == 0 { 0 } else { 3 })
}

fn cmd_landscape_grid(config: &Config, out: &Path, jobs: Option<usize>) -> Result<i32, CliError> {
    let sys = config.system()?.to_system();
    let goal = config.goal()?;
    let l = &config.landscape;
    let c = &config.control;
    let basis = |given: &Option<Vec<f64>>, f: &dyn Fn(f64) -> f64| match given {
        Some(s) => ControlSignal::new(c.t_final, s.clone()),
        None => ControlSignal::from_fn(c.t_final, c.grid_size, f),
    };
    let t_final = c.t_final;
    let p1 = basis(&l.phi1, &|_| 1.0)?;
    let p2 = basis(&l.phi2, &|t| (std::f64::consts::PI * t / t_final).cos())?;
    let run = || landscape_grid(&sys, &config.initial_state(), &goal, (&p1, &p2), l.a_range, l.b_range, l.resolution, &config.integrator);
    let grid = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(run),
        None => run(),
    }?;
    fs::create_dir_all(out.join("grids")).map_err(output)?;
    let file = fs::File::create(out.join("grids").join("landscape.csv")).map_err(output)?;
    grid.write_csv(BufWriter::new(file)).map_err(output)?;
    let missing = grid.phi.iter().filter(|v| v.is_none()).count();
    if let Some((a, b, phi)) = grid.max() {
        println!("grid max {phi:.6e} at a = {a}, b = {b}; {missing} missing cells");
    }
    Ok(0)
}

/// Parses the process arguments, runs, and maps errors to exit codes.
pub fn main_exit() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_reports_position() {
        let err = Config::from_json("{\n  \"system\": {\"A\": [[1, 0], [0, 1]], \"B\": [1, 0], \"typo\": 1}\n}").unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Config::from_json("{\"system\": "), Err(CliError::Parse { .. })));
    }

    #[test]
    fn control_section_variants() {
        let explicit = ControlSection {
            samples: Some(vec![0.0, 1.0, 2.0]),
            ..Default::default()
        };
        assert_eq!(explicit.build(0).unwrap().samples(), &[0.0, 1.0, 2.0]);
        let constant = ControlSection {
            constant: Some(0.5),
            grid_size: 4,
            ..Default::default()
        };
        assert_eq!(constant.build(0).unwrap().samples(), &[0.5; 4]);
        let random = ControlSection::default();
        assert_eq!(random.build(7).unwrap(), random.build(7).unwrap());
        assert_ne!(random.build(7).unwrap(), random.build(8).unwrap());
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::Missing("goal").exit_code(), 1);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 3);
    }
}
