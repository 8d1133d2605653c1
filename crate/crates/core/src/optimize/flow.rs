use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::{control_gradient, sensitivity_sweep, FlowError, GradientError, Outcome, RunRecord};
use crate::odeint::{Control, IntegratorConfig, OdeError, Stepper};
use crate::system::{check_dims, final_state, ControlSignal, Goal, NonlinearSystem, SystemError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Learning rate `β` of the homotopy flow.
    pub beta: f64,
    /// Homotopy horizon: a phase that reaches `s_max` times out.
    pub s_max: f64,
    /// Distance to the goal below which a run has converged.
    pub convergence_threshold: f64,
    /// Accepted steps without a fidelity gain above `stall_tolerance`
    /// before the flow is declared stalled.
    pub stall_window: usize,
    pub stall_tolerance: f64,
    /// Integrator for the homotopy parameter `s`. Its `max_steps` is the
    /// per-phase step budget.
    pub integrator: IntegratorConfig,
    /// Integrator for the state and transition matrix in `t`.
    pub inner_integrator: IntegratorConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            s_max: 1e4,
            convergence_threshold: 1e-3,
            stall_window: 25,
            stall_tolerance: 1e-12,
            integrator: IntegratorConfig::adaptive(1e-6, 1e-8).with_max_steps(4_000),
            inner_integrator: IntegratorConfig::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = [
            ("beta", self.beta),
            ("s_max", self.s_max),
            ("convergence_threshold", self.convergence_threshold),
            ("stall_tolerance", self.stall_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlowError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.stall_window == 0 {
            return Err(FlowError::InvalidConfig("stall_window must be at least 1".into()));
        }
        self.integrator
            .validate()
            .and_then(|_| self.inner_integrator.validate())
            .map_err(|e| FlowError::InvalidConfig(e.to_string()))
    }

    /// Allowed fidelity decrease between accepted steps: ten times the
    /// s-integrator tolerance at the current fidelity.
    pub fn monotonicity_slack(&self, phi: f64) -> f64 {
        10.0 * self.integrator.tolerance_at(phi.abs())
    }
}

/// Result of one uninterrupted flow phase.
#[derive(Debug, Clone)]
pub(crate) struct Phase {
    pub outcome: Outcome,
    pub control: ControlSignal,
    pub curve: Vec<(f64, f64)>,
    pub s_end: f64,
    pub distance: f64,
    pub steps: usize,
    pub diagnostic: Option<String>,
}

#[derive(Debug)]
enum EvalError {
    AtGoal(Vec<f64>),
    Failed(String),
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::AtGoal(_) => f.write_str("control reaches the goal"),
            EvalError::Failed(m) => f.write_str(m),
        }
    }
}

struct Evaluation {
    control: Vec<f64>,
    distance: f64,
}

pub(crate) fn run_phase(
    sys: &NonlinearSystem,
    x0: &[f64],
    w0: &ControlSignal,
    goal: &Goal,
    config: &FlowConfig,
    s_start: f64,
) -> Result<Phase, FlowError> {
    let inner = &config.inner_integrator;
    let distance0 = goal.distance(&final_state(sys, x0, w0, inner)?);
    let mut phase = Phase {
        outcome: Outcome::Converged,
        control: w0.clone(),
        curve: vec![(s_start, -distance0)],
        s_end: s_start,
        distance: distance0,
        steps: 0,
        diagnostic: None,
    };
    if distance0 < config.convergence_threshold {
        return Ok(phase);
    }

    let last_eval: RefCell<Option<Evaluation>> = RefCell::new(None);
    let mut rhs = |_s: f64, w: &[f64], dw: &mut [f64]| -> Result<(), EvalError> {
        let control = w0.with_samples(w.to_vec()).map_err(|e| EvalError::Failed(e.to_string()))?;
        let sweep = sensitivity_sweep(sys, x0, &control, inner).map_err(|e| EvalError::Failed(e.to_string()))?;
        let distance = goal.distance(&sweep.x_final);
        *last_eval.borrow_mut() = Some(Evaluation {
            control: w.to_vec(),
            distance,
        });
        match control_gradient(sys, &sweep.x_final, &sweep.propagators, goal, &control) {
            Ok(g) => {
                for (d, gk) in dw.iter_mut().zip(g) {
                    *d = config.beta * gk;
                }
                Ok(())
            }
            Err(GradientError::AtGoal { .. }) => Err(EvalError::AtGoal(w.to_vec())),
            Err(e) => Err(EvalError::Failed(e.to_string())),
        }
    };

    let mut accepted = w0.samples().to_vec();
    let mut best_in_window = -distance0;
    let mut window = 0usize;
    let mut stop: Option<Outcome> = None;
    let mut failure: Option<String> = None;
    let mut observer = |s: f64, w: &[f64]| -> Control {
        let cached = last_eval
            .borrow()
            .as_ref()
            .filter(|e| e.control == w)
            .map(|e| e.distance);
        let distance = match cached {
            Some(d) => d,
            None => {
                let control = w0.with_samples(w.to_vec()).and_then(|c| final_state(sys, x0, &c, inner));
                match control {
                    Ok(x) => goal.distance(&x),
                    Err(e) => {
                        failure = Some(e.to_string());
                        stop = Some(Outcome::Aborted);
                        return Control::Stop;
                    }
                }
            }
        };
        let phi = -distance;
        let previous = phase.curve.last().expect("curve starts non-empty").1;
        if phi < previous - config.monotonicity_slack(previous) {
            // The step lost fidelity beyond integration error: keep the
            // last good control and stop.
            stop = Some(Outcome::PrecisionStall);
            return Control::Stop;
        }
        phase.steps += 1;
        phase.curve.push((s, phi));
        phase.s_end = s;
        phase.distance = distance;
        accepted.copy_from_slice(w);
        if distance < config.convergence_threshold {
            stop = Some(Outcome::Converged);
            return Control::Stop;
        }
        if phi > best_in_window + config.stall_tolerance {
            best_in_window = phi;
            window = 0;
        } else {
            window += 1;
            if window >= config.stall_window {
                stop = Some(Outcome::PrecisionStall);
                return Control::Stop;
            }
        }
        Control::Continue
    };

    let mut stepper = Stepper::new(w0.len(), &config.integrator).map_err(|e| FlowError::InvalidConfig(e.to_string()))?;
    let mut w = w0.samples().to_vec();
    let result = stepper.advance(&mut rhs, s_start, s_start + config.s_max, &mut w, &mut observer);

    let outcome = match result {
        Ok(_) => stop.unwrap_or(Outcome::TimedOut),
        Err(OdeError::MaxSteps { .. }) => Outcome::TimedOut,
        Err(OdeError::StepUnderflow { .. }) => Outcome::PrecisionStall,
        Err(OdeError::Rhs {
            t,
            source: EvalError::AtGoal(w_goal),
        }) => {
            // A stage control hit the goal exactly; adopt it.
            let control = w0.with_samples(w_goal)?;
            let distance = goal.distance(&final_state(sys, x0, &control, inner)?);
            phase.curve.push((t, -distance));
            phase.s_end = t;
            phase.distance = distance;
            accepted = control.samples().to_vec();
            Outcome::Converged
        }
        Err(OdeError::Rhs {
            source: EvalError::Failed(msg),
            ..
        }) => {
            failure = Some(msg);
            Outcome::Aborted
        }
        Err(e @ (OdeError::InvalidConfig(_) | OdeError::InvalidSpan { .. })) => {
            return Err(FlowError::InvalidConfig(e.to_string()))
        }
    };
    phase.outcome = if phase.distance < config.convergence_threshold {
        Outcome::Converged
    } else if outcome == Outcome::Converged {
        Outcome::PrecisionStall
    } else {
        outcome
    };
    phase.diagnostic = failure;
    phase.control = w0.with_samples(accepted)?;
    Ok(phase)
}

/// Runs one D-MORPH flow from `w0` without rescue. Integration failures
/// inside the flow end the run with [`Outcome::Aborted`] and a diagnostic;
/// only invalid inputs are errors.
pub fn dmorph_flow(
    sys: &NonlinearSystem,
    x0: &[f64],
    w0: &ControlSignal,
    goal: &Goal,
    config: &FlowConfig,
) -> Result<RunRecord, FlowError> {
    config.validate()?;
    check_inputs(sys, x0, goal)?;
    let phase = match run_phase(sys, x0, w0, goal, config, 0.0) {
        Ok(p) => p,
        Err(FlowError::System(e)) => return Ok(aborted_record(w0, e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(RunRecord {
        index: None,
        seed: 0,
        fidelity_curve: phase.curve,
        outcome: phase.outcome,
        direct_outcome: phase.outcome,
        final_distance: phase.distance,
        control_final: phase.control,
        wall_iterations: phase.steps,
        rescues: Vec::new(),
        diagnostic: phase.diagnostic,
    })
}

pub(crate) fn check_inputs(sys: &NonlinearSystem, x0: &[f64], goal: &Goal) -> Result<(), SystemError> {
    check_dims(sys, x0)?;
    if goal.point().len() != sys.dim() {
        return Err(SystemError::DimensionMismatch {
            what: "goal",
            expected: sys.dim(),
            found: goal.point().len(),
        });
    }
    Ok(())
}

pub(crate) fn aborted_record(w0: &ControlSignal, diagnostic: String) -> RunRecord {
    RunRecord {
        index: None,
        seed: 0,
        fidelity_curve: Vec::new(),
        outcome: Outcome::Aborted,
        direct_outcome: Outcome::Aborted,
        final_distance: f64::NAN,
        control_final: w0.clone(),
        wall_iterations: 0,
        rescues: Vec::new(),
        diagnostic: Some(diagnostic),
    }
}
