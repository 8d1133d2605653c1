//! Control landscapes of nonlinear systems `ẋ = Ax + Bw(t) + f(x)`.
//!
//! The crate certifies the three sufficient conditions for a trap-free
//! landscape (controllability of the linear part with a bounded
//! nonlinearity, local controllability, unrestricted controls), runs
//! D-MORPH homotopy gradient flows that steer `x(T)` to a goal, and
//! reproduces batch studies over random planar trigonometric systems.
//!
//! ## Examples
//!
//! - **`certificates`**: Kalman rank, local margin and bound checks
//! - **`simulate_endpoint`**: the end-point map with both integrators
//! - **`optimize_single`**: one D-MORPH flow and its fidelity curve
//! - **`hill_climb_rescue`**: timed-out flows rescued by hill climbing
//! - **`batch_study`**: the randomized study over certified systems
//! - **`landscape_grid`**: a two-parameter slice of the landscape
//!
//! ```bash
//! cargo run --release --example optimize_single
//! cargo run --release --example batch_study -- 10 5 4 2024
//! ```
//!
//! The `landscape` binary drives the same operations from JSON files; see
//! `examples/configs/`.

// `!(x > y)` is used on purpose so that NaN fails numeric checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certify;
pub mod cli;
pub mod experiment;
pub mod linalg;
pub mod odeint;
pub mod optimize;
pub mod seeds;
pub mod system;

pub use certify::{certify, certify_trig, CertificateReport};
pub use experiment::{run_batch, BatchSummary, ProtocolConfig};
pub use odeint::{integrate, DenseOutput, IntegratorConfig, Method};
pub use optimize::{dmorph_flow, optimize_with_rescue, FlowConfig, Outcome, RescueConfig, RunRecord};
pub use system::{endpoint_map, fidelity, ControlSignal, Goal, NonlinearSystem, TrigSystem};
