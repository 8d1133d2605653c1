use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::flow::{aborted_record, check_inputs, run_phase};
use super::{FlowConfig, FlowError, Outcome, RescueEvent, RunRecord};
use crate::odeint::IntegratorConfig;
use crate::seeds::child_seed;
use crate::system::{check_dims, final_state, ControlSignal, Goal, NonlinearSystem, SystemError};

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbResult {
    pub control: ControlSignal,
    /// Strictly positive when a proposal was accepted, zero otherwise.
    pub delta_fidelity: f64,
    pub tries: usize,
    pub sigma: f64,
}

impl HillClimbResult {
    pub fn improved(&self) -> bool {
        self.delta_fidelity > 0.0
    }
}

/// Proposes `w + σ·ξ` with i.i.d. standard normal `ξ` per sample until one
/// strictly raises the fidelity, giving up after `max_tries`.
#[allow(clippy::too_many_arguments)]
pub fn hill_climb(
    sys: &NonlinearSystem,
    x0: &[f64],
    w: &ControlSignal,
    goal: &Goal,
    sigma: f64,
    max_tries: usize,
    seed: u64,
    config: &IntegratorConfig,
) -> Result<HillClimbResult, SystemError> {
    check_dims(sys, x0)?;
    let phi0 = -goal.distance(&final_state(sys, x0, w, config)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=max_tries {
        let proposal: Vec<f64> = w
            .samples()
            .iter()
            .map(|v| {
                let xi: f64 = StandardNormal.sample(&mut rng);
                v + sigma * xi
            })
            .collect();
        let Ok(candidate) = w.with_samples(proposal) else {
            continue;
        };
        // A proposal that breaks the integrator is just a failed try.
        let Ok(x) = final_state(sys, x0, &candidate, config) else {
            continue;
        };
        let phi = -goal.distance(&x);
        if phi > phi0 {
            return Ok(HillClimbResult {
                control: candidate,
                delta_fidelity: phi - phi0,
                tries: attempt,
                sigma,
            });
        }
    }
    Ok(HillClimbResult {
        control: w.clone(),
        delta_fidelity: 0.0,
        tries: max_tries,
        sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescueConfig {
    /// Total proposals per rescue, split into four rounds of shrinking σ.
    pub max_tries: usize,
    /// Hill-climb/restart cycles before a run keeps its last outcome.
    pub max_cycles: usize,
}

impl Default for RescueConfig {
    fn default() -> Self {
        Self {
            max_tries: 400,
            max_cycles: 5,
        }
    }
}

const ROUNDS: usize = 4;

/// Hill climbing with the escalating-precision schedule: `σ` starts at
/// `1e-3·(rms(w) + 1)` and halves after every `max_tries/4` consecutive
/// failures.
#[allow(clippy::too_many_arguments)]
pub fn hill_climb_escalating(
    sys: &NonlinearSystem,
    x0: &[f64],
    w: &ControlSignal,
    goal: &Goal,
    max_tries: usize,
    seed: u64,
    config: &IntegratorConfig,
) -> Result<HillClimbResult, SystemError> {
    let per_round = (max_tries / ROUNDS).max(1);
    let mut sigma = 1e-3 * (w.rms() + 1.0);
    let mut tries = 0;
    let mut last = None;
    for round in 0..ROUNDS {
        let mut r = hill_climb(sys, x0, w, goal, sigma, per_round, child_seed(seed, &[round as u64]), config)?;
        tries += r.tries;
        r.tries = tries;
        if r.improved() {
            return Ok(r);
        }
        last = Some(r);
        sigma *= 0.5;
    }
    Ok(last.expect("at least one round"))
}

/// D-MORPH with the rescue loop: whenever a phase times out or stalls, hill
/// climbing looks for an improving neighbour and the flow restarts from it.
/// A failed hill climb marks the run as a suspected trap.
#[allow(clippy::too_many_arguments)]
pub fn optimize_with_rescue(
    sys: &NonlinearSystem,
    x0: &[f64],
    w0: &ControlSignal,
    goal: &Goal,
    flow: &FlowConfig,
    rescue: &RescueConfig,
    seed: u64,
) -> Result<RunRecord, FlowError> {
    flow.validate()?;
    check_inputs(sys, x0, goal)?;
    let inner = &flow.inner_integrator;
    let mut phase = match run_phase(sys, x0, w0, goal, flow, 0.0) {
        Ok(p) => p,
        Err(FlowError::System(e)) => {
            let mut rec = aborted_record(w0, e.to_string());
            rec.seed = seed;
            return Ok(rec);
        }
        Err(e) => return Err(e),
    };
    let direct_outcome = phase.outcome;
    let mut curve = std::mem::take(&mut phase.curve);
    let mut iterations = phase.steps;
    let mut rescues = Vec::new();
    let mut outcome = phase.outcome;

    for cycle in 0..rescue.max_cycles {
        if !outcome.needs_rescue() {
            break;
        }
        let climb = hill_climb_escalating(
            sys,
            x0,
            &phase.control,
            goal,
            rescue.max_tries,
            child_seed(seed, &[cycle as u64]),
            inner,
        )?;
        iterations += climb.tries;
        rescues.push(RescueEvent {
            cycle,
            after: outcome,
            s: phase.s_end,
            fidelity_before: -phase.distance,
            delta_fidelity: climb.delta_fidelity,
            sigma: climb.sigma,
            tries: climb.tries,
        });
        if !climb.improved() {
            outcome = Outcome::TrapSuspected;
            break;
        }
        let s_restart = phase.s_end;
        phase = match run_phase(sys, x0, &climb.control, goal, flow, s_restart) {
            Ok(p) => p,
            Err(FlowError::System(e)) => {
                phase.diagnostic = Some(e.to_string());
                outcome = Outcome::Aborted;
                break;
            }
            Err(e) => return Err(e),
        };
        curve.append(&mut phase.curve);
        iterations += phase.steps;
        outcome = phase.outcome;
    }

    Ok(RunRecord {
        index: None,
        seed,
        fidelity_curve: curve,
        outcome,
        direct_outcome,
        final_distance: phase.distance,
        control_final: phase.control,
        wall_iterations: iterations,
        rescues,
        diagnostic: phase.diagnostic,
    })
}
