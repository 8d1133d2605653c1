//! Certify the three trap-freedom conditions for a few planar systems.
//!
//! cargo run --example certificates

use control_landscape::certify::{certify_trig, margin_numerator};
use control_landscape::TrigSystem;

fn main() {
    let damped = TrigSystem {
        c1: [[0.02, 0.0], [0.0, -0.01]],
        s2: [[0.0, 0.03], [0.01, 0.0]],
        ..TrigSystem::linear([[-0.2, 0.7], [-0.9, 0.1]], [0.5, 0.8])
    };
    // B is an eigenvector of A: the margin vanishes.
    let eigen = TrigSystem::linear([[2.0, 0.0], [0.0, -1.0]], [1.0, 0.0]);
    let strong = TrigSystem {
        c1: [[0.8, 0.0], [0.0, 0.8]],
        ..TrigSystem::linear([[0.0, 0.1], [-0.1, 0.0]], [1.0, 0.0])
    };
    for (name, sys) in [("damped", damped), ("eigenvector", eigen), ("strong", strong)] {
        let r = certify_trig(&sys);
        let m = margin_numerator(&sys.a_matrix(), &sys.b_vector()).unwrap();
        println!("{name}");
        println!("  kalman rank {} / {}", r.kalman_rank, r.dim);
        println!("  m(A,B) = {m:.4}, m/|B| = {:.4}, |Df| <= {:.4}", r.local_margin.unwrap(), r.df_bound.unwrap());
        println!("  all certificates pass: {}", r.all_passed());
    }
}
