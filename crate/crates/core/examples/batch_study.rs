//! Small batch study over random certified planar trigonometric systems.
//!
//! cargo run --release --example batch_study -- [n_systems] [n_goals] [n_controls] [seed]

use std::time::Instant;

use control_landscape::experiment::{run_batch, ProtocolConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let config = ProtocolConfig {
        n_systems: arg(0, 5) as usize,
        n_goals: arg(1, 3) as usize,
        n_controls: arg(2, 2) as usize,
        master_seed: arg(3, 2024),
        ..Default::default()
    };
    let start = Instant::now();
    let result = run_batch(&config, None)?;
    print!("{}", result.summary.table());
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    for rec in result.records.iter().filter(|r| r.outcome != control_landscape::Outcome::Converged) {
        println!("{:?} {:?} distance {:.3e} {}", rec.index.unwrap_or_default(), rec.outcome, rec.final_distance, rec.diagnostic.as_deref().unwrap_or(""));
    }
    Ok(())
}
