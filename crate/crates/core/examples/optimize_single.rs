//! One D-MORPH flow from a random-walk control to a goal, printing the
//! monotone fidelity curve.
//!
//! cargo run --release --example optimize_single

use control_landscape::experiment::generate_initial_control;
use control_landscape::experiment::Noise;
use control_landscape::{dmorph_flow, endpoint_map, FlowConfig, Goal, TrigSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = TrigSystem {
        c1: [[0.03, -0.02], [0.01, 0.04]],
        s1: [[-0.05, 0.0], [0.02, 0.01]],
        c2: [[0.0, 0.02], [-0.03, 0.0]],
        s2: [[0.01, 0.0], [0.0, -0.02]],
        ..TrigSystem::linear([[0.4, -0.6], [0.7, -0.2]], [0.9, 0.3])
    }
    .to_system();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w0 = generate_initial_control(&mut rng, 128, 1.0, Noise::Uniform)?;
    let goal = Goal::new(vec![-1.5, 1.1])?;
    let config = FlowConfig::default();

    let rec = dmorph_flow(&sys, &[0.0, 0.0], &w0, &goal, &config)?;
    let stride = (rec.fidelity_curve.len() / 10).max(1);
    for (s, phi) in rec.fidelity_curve.iter().step_by(stride) {
        println!("s = {s:>10.4}   phi = {phi:.6}");
    }
    println!("outcome {:?} after {} steps, final distance {:.2e}", rec.outcome, rec.wall_iterations, rec.final_distance);
    let end = endpoint_map(&sys, &[0.0, 0.0], &rec.control_final, &config.inner_integrator)?;
    println!("x(T) = {:?}", end.x_final);
    Ok(())
}
