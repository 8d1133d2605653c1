//! Tabulate the fidelity over a two-parameter slice of control space and
//! write it as CSV for plotting.
//!
//! cargo run --release --example landscape_grid -- [out.csv]

use control_landscape::experiment::landscape_grid;
use control_landscape::{ControlSignal, Goal, IntegratorConfig, TrigSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = TrigSystem {
        s1: [[0.04, 0.0], [0.0, 0.04]],
        c2: [[0.0, -0.02], [0.02, 0.0]],
        ..TrigSystem::linear([[-0.3, 0.5], [-0.5, 0.2]], [1.0, 0.4])
    }
    .to_system();
    let phi1 = ControlSignal::constant(1.0, 64, 1.0)?;
    let phi2 = ControlSignal::from_fn(1.0, 64, |t| (std::f64::consts::PI * t).cos())?;
    let goal = Goal::new(vec![0.8, 0.5])?;
    let grid = landscape_grid(
        &sys,
        &[0.0, 0.0],
        &goal,
        (&phi1, &phi2),
        (-4.0, 4.0),
        (-12.0, 12.0),
        (33, 33),
        &IntegratorConfig::default(),
    )?;
    let (a, b, phi) = grid.max().expect("grid has values");
    println!("max phi {phi:.5} at (a, b) = ({a:.2}, {b:.2})");
    // Coarse text rendering, darker is closer to the goal.
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let lo = grid.phi.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    for ia in (0..grid.a.len()).step_by(2) {
        let row: String = (0..grid.b.len())
            .map(|ib| grid.value(ia, ib).map_or('?', |v| shades[(((v - lo) / (phi - lo)) * 9.0).round() as usize]))
            .collect();
        println!("{row}");
    }
    if let Some(path) = std::env::args().nth(1) {
        grid.write_csv(std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
