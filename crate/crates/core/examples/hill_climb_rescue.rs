//! Starve the flow of steps so it times out, then watch the hill-climbing
//! rescue raise the fidelity and restart it.
//!
//! cargo run --release --example hill_climb_rescue

use control_landscape::optimize::hill_climb_escalating;
use control_landscape::{optimize_with_rescue, ControlSignal, FlowConfig, Goal, IntegratorConfig, RescueConfig, TrigSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = TrigSystem {
        c1: [[0.05, 0.0], [0.0, 0.05]],
        ..TrigSystem::linear([[0.0, 1.0], [-1.0, 0.0]], [0.0, 1.0])
    }
    .to_system();
    let x0 = [0.0, 0.0];
    let w0 = ControlSignal::constant(1.0, 64, 0.0)?;
    let goal = Goal::new(vec![0.6, 1.4])?;

    let climb = hill_climb_escalating(&sys, &x0, &w0, &goal, 400, 5, &IntegratorConfig::default())?;
    println!("one rescue: delta phi = {:.3e} after {} tries at sigma {:.1e}", climb.delta_fidelity, climb.tries, climb.sigma);

    let flow = FlowConfig {
        integrator: IntegratorConfig::adaptive(1e-6, 1e-8).with_max_steps(6),
        ..Default::default()
    };
    let rec = optimize_with_rescue(&sys, &x0, &w0, &goal, &flow, &RescueConfig::default(), 5)?;
    println!("direct outcome {:?}, final outcome {:?}", rec.direct_outcome, rec.outcome);
    for r in &rec.rescues {
        println!(
            "  cycle {} after {:?} at s = {:.3}: phi {:.5} -> +{:.2e}",
            r.cycle, r.after, r.s, r.fidelity_before, r.delta_fidelity
        );
    }
    println!("final distance {:.3e}", rec.final_distance);
    Ok(())
}
