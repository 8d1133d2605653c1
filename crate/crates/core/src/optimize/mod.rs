//! D-MORPH homotopy gradient flow on the control landscape, its
//! transition-matrix gradient, and the stochastic hill-climbing rescue.
//!
//! The fidelity is `Φ = −‖x(T) − G‖` and every flow ascends it:
//! `∂w(s,t)/∂s = β δΦ/δw(s,t)` with
//! `δΦ/δw(t) = ((G − x(T))/‖G − x(T)‖)ᵀ M(T) M(t)⁻¹ B`.

mod flow;
mod hill_climb;
mod transition;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flow::{dmorph_flow, FlowConfig};
pub use hill_climb::{hill_climb, hill_climb_escalating, optimize_with_rescue, HillClimbResult, RescueConfig};
pub use transition::{final_propagators, sensitivity_sweep, transition_matrix, Sweep, TransitionMatrixPath};

use crate::linalg::solve_transposed;
use crate::odeint::DenseOutput;
use crate::system::{ControlSignal, Goal, NonlinearSystem, SystemError};

/// End-points closer to the goal than this have no defined gradient.
pub const AT_GOAL_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradientError {
    #[error("end-point is at the goal (distance {distance:e}); the gradient is undefined")]
    AtGoal { distance: f64 },
    #[error("transition matrix is singular at t = {t}")]
    SingularPropagator { t: f64 },
    #[error("transition matrix path does not cover t = {t}")]
    Uncovered { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// `δΦ/δw(t_k)` at each control grid time `t_k`, from the end-point and the
/// transition matrices along the trajectory.
pub fn control_gradient(
    sys: &NonlinearSystem,
    x_final: &[f64],
    m_path: &TransitionMatrixPath,
    goal: &Goal,
    control: &ControlSignal,
) -> Result<Vec<f64>, GradientError> {
    let n = sys.dim();
    let distance = goal.distance(x_final);
    if distance < AT_GOAL_DISTANCE {
        return Err(GradientError::AtGoal { distance });
    }
    let u: Vec<f64> = goal.point().iter().zip(x_final).map(|(g, x)| (g - x) / distance).collect();
    let m_final = m_path.final_matrix();
    // r = uᵀ M(T)
    let r: Vec<f64> = (0..n).map(|j| (0..n).map(|i| u[i] * m_final[i * n + j]).sum()).collect();
    let b = sys.b();
    (0..control.len())
        .map(|k| {
            let t = control.time(k);
            let m = m_path.at(t).ok_or(GradientError::Uncovered { t })?;
            // uᵀ M(T) M(t)⁻¹ B = (M(t)⁻ᵀ r) · B
            let z = solve_transposed(n, &m, &r).ok_or(GradientError::SingularPropagator { t })?;
            Ok(z.iter().zip(b.iter()).map(|(zi, bi)| zi * bi).sum())
        })
        .collect()
}

/// [`control_gradient`] from a stored trajectory.
pub fn control_gradient_from_trajectory(
    sys: &NonlinearSystem,
    traj: &DenseOutput,
    m_path: &TransitionMatrixPath,
    goal: &Goal,
    control: &ControlSignal,
) -> Result<Vec<f64>, GradientError> {
    control_gradient(sys, traj.final_state(), m_path, goal, control)
}

/// Partial derivatives `∂Φ/∂w_k` of the sampled problem, `∫ g(t) φ_k(t) dt`
/// for the hat function `φ_k` of sample `k`, with `g` linearly interpolated
/// between grid times. Interior samples get `h(g_{k−1} + 4g_k + g_{k+1})/6`;
/// plain trapezoid weights would lose an order of accuracy at the two ends.
pub fn sample_gradient(gradient: &[f64], control: &ControlSignal) -> Vec<f64> {
    let n = gradient.len();
    let h = control.step();
    (0..n)
        .map(|k| {
            let left = if k > 0 { gradient[k - 1] + 2.0 * gradient[k] } else { 0.0 };
            let right = if k + 1 < n { 2.0 * gradient[k] + gradient[k + 1] } else { 0.0 };
            h * (left + right) / 6.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    TimedOut,
    PrecisionStall,
    TrapSuspected,
    Aborted,
}

impl Outcome {
    pub fn needs_rescue(self) -> bool {
        matches!(self, Outcome::TimedOut | Outcome::PrecisionStall)
    }
}

/// One hill-climbing intervention after a flow stopped short of the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescueEvent {
    pub cycle: usize,
    /// Outcome of the flow phase that preceded the rescue.
    pub after: Outcome,
    /// Homotopy parameter where that phase stopped.
    pub s: f64,
    pub fidelity_before: f64,
    pub delta_fidelity: f64,
    pub sigma: f64,
    pub tries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// `(system, goal, control)` indices when the run belongs to a batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<[usize; 3]>,
    pub seed: u64,
    /// `(s, Φ)` at every accepted homotopy step, including restarts.
    pub fidelity_curve: Vec<(f64, f64)>,
    pub outcome: Outcome,
    /// Outcome of the first flow phase, before any rescue.
    pub direct_outcome: Outcome,
    /// `NaN` (serialized as `null`) when the run aborted before any end-point.
    #[serde(deserialize_with = "nan_if_null")]
    pub final_distance: f64,
    pub control_final: ControlSignal,
    pub wall_iterations: usize,
    #[serde(default)]
    pub rescues: Vec<RescueEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl RunRecord {
    pub fn final_fidelity(&self) -> f64 {
        -self.final_distance
    }

    /// Largest drop between consecutive points of the fidelity curve.
    pub fn max_fidelity_drop(&self) -> f64 {
        self.fidelity_curve
            .windows(2)
            .map(|p| p[0].1 - p[1].1)
            .fold(0.0, f64::max)
    }

    /// Writes the fidelity curve as `s,phi` CSV.
    pub fn write_curve_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["s", "phi"])?;
        for (s, phi) in &self.fidelity_curve {
            wtr.write_record([s.to_string(), phi.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odeint::IntegratorConfig;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn drift_free_gradient_is_constant() {
        let sys = NonlinearSystem::linear(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let w = ControlSignal::constant(1.0, 11, 0.2).unwrap();
        let goal = Goal::new(vec![1.5, -2.0]).unwrap();
        let sweep = sensitivity_sweep(&sys, &[0.0, 0.0], &w, &IntegratorConfig::default()).unwrap();
        let g = control_gradient(&sys, &sweep.x_final, &sweep.propagators, &goal, &w).unwrap();
        let d = goal.distance(&sweep.x_final);
        let expected = (1.5 - sweep.x_final[0]) / d;
        for gk in g {
            assert!((gk - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn at_goal_gradient_is_refused() {
        let sys = NonlinearSystem::linear(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let w = ControlSignal::constant(1.0, 3, 1.0).unwrap();
        let sweep = sensitivity_sweep(&sys, &[0.0, 0.0], &w, &IntegratorConfig::default()).unwrap();
        let goal = Goal::new(sweep.x_final.clone()).unwrap();
        assert!(matches!(
            control_gradient(&sys, &sweep.x_final, &sweep.propagators, &goal, &w),
            Err(GradientError::AtGoal { .. })
        ));
    }

    #[test]
    fn sample_gradient_integrates_hat_functions() {
        // For g linear in t the hat-function integrals are exact.
        let w = ControlSignal::constant(2.0, 5, 0.0).unwrap();
        let g: Vec<f64> = (0..5).map(|k| 1.0 + 3.0 * w.time(k)).collect();
        let h = w.step();
        let s = sample_gradient(&g, &w);
        assert!((s[0] - h * (g[0] / 2.0 + 3.0 * h / 6.0)).abs() < 1e-14);
        assert!((s[2] - h * g[2]).abs() < 1e-14);
        let total: f64 = s.iter().sum();
        assert!((total - (2.0 + 3.0 * 2.0)).abs() < 1e-13);
    }

    #[test]
    fn curve_csv_has_header() {
        let rec = RunRecord {
            index: None,
            seed: 1,
            fidelity_curve: vec![(0.0, -1.0), (0.5, -0.25)],
            outcome: Outcome::Converged,
            direct_outcome: Outcome::Converged,
            final_distance: 0.25,
            control_final: ControlSignal::constant(1.0, 2, 0.0).unwrap(),
            wall_iterations: 1,
            rescues: vec![],
            diagnostic: None,
        };
        let mut buf = Vec::new();
        rec.write_curve_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "s,phi\n0,-1\n0.5,-0.25\n");
        assert_eq!(rec.max_fidelity_drop(), 0.0);
    }
}
