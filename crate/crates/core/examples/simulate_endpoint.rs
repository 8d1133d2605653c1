//! Integrate a trigonometric system under a fixed control and compare the
//! adaptive and fixed-step integrators at the end-point.
//!
//! cargo run --example simulate_endpoint

use control_landscape::{endpoint_map, ControlSignal, Goal, IntegratorConfig, TrigSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = TrigSystem {
        c1: [[0.05, 0.0], [0.02, 0.0]],
        s1: [[0.0, -0.04], [0.0, 0.03]],
        ..TrigSystem::linear([[0.1, 1.0], [-1.0, -0.1]], [0.0, 1.0])
    }
    .to_system();
    let w = ControlSignal::from_fn(2.0, 101, |t| (3.0 * t).sin())?;
    let x0 = [0.5, 0.0];

    let adaptive = endpoint_map(&sys, &x0, &w, &IntegratorConfig::default())?;
    let fixed = endpoint_map(&sys, &x0, &w, &IntegratorConfig::fixed(1e-3))?;
    println!("adaptive x(T) = {:?} ({} stored points)", adaptive.x_final, adaptive.trajectory.len());
    println!("fixed    x(T) = {:?} ({} stored points)", fixed.x_final, fixed.trajectory.len());
    let mid = adaptive.trajectory.at(1.0).expect("t = 1 lies inside the span");
    println!("x(1.0)  = {mid:?}");

    let goal = Goal::new(vec![1.0, 1.0])?;
    println!("fidelity toward {:?}: {:.6}", goal.point(), control_landscape::fidelity(&adaptive.x_final, &goal));
    Ok(())
}
