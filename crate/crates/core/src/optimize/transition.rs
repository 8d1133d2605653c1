//! Transition matrices `M(t)` solving `Ṁ = (A + Df(x(t)))M`, `M(0) = I`.

use std::convert::Infallible;

use serde::{Deserialize, Serialize};

use crate::linalg::determinant;
use crate::odeint::{Control, DenseOutput, IntegratorConfig, OdeError, Stepper};
use crate::system::{check_dims, ControlSignal, NonlinearSystem, SystemError};

/// `M(t)` sampled on a time grid, row-major `n × n` per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrixPath {
    dim: usize,
    grid: Vec<f64>,
    matrices: Vec<f64>,
}

impl TransitionMatrixPath {
    fn starting_at(dim: usize, t0: f64) -> Self {
        let mut matrices = vec![0.0; dim * dim];
        for i in 0..dim {
            matrices[i * dim + i] = 1.0;
        }
        Self {
            dim,
            grid: vec![t0],
            matrices,
        }
    }

    fn push(&mut self, t: f64, m: &[f64]) {
        self.grid.push(t);
        self.matrices.extend_from_slice(m);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn matrix(&self, i: usize) -> &[f64] {
        let nn = self.dim * self.dim;
        &self.matrices[i * nn..(i + 1) * nn]
    }

    pub fn final_matrix(&self) -> &[f64] {
        self.matrix(self.len() - 1)
    }

    pub fn determinants(&self) -> Vec<f64> {
        (0..self.len()).map(|i| determinant(self.dim, self.matrix(i))).collect()
    }

    /// `M(t)`, exact at grid points and linearly interpolated between them.
    pub fn at(&self, t: f64) -> Option<Vec<f64>> {
        let (first, last) = (self.grid[0], *self.grid.last()?);
        if !(t >= first && t <= last) {
            return None;
        }
        let hi = self.grid.partition_point(|&s| s < t);
        if self.grid[hi] == t {
            return Some(self.matrix(hi).to_vec());
        }
        let lo = hi - 1;
        let theta = (t - self.grid[lo]) / (self.grid[hi] - self.grid[lo]);
        Some(
            self.matrix(lo)
                .iter()
                .zip(self.matrix(hi))
                .map(|(a, b)| a + theta * (b - a))
                .collect(),
        )
    }
}

// out = l · r for row-major n×n operands.
fn mat_mul(n: usize, l: &[f64], r: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += l[i * n + k] * r[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// Integrates the variational equation along a stored trajectory, with
/// `x(t)` linearly interpolated between trajectory samples. The result is
/// recorded at every trajectory time.
pub fn transition_matrix(
    sys: &NonlinearSystem,
    traj: &DenseOutput,
    config: &IntegratorConfig,
) -> Result<TransitionMatrixPath, SystemError> {
    let n = sys.dim();
    if traj.dim() != n {
        return Err(SystemError::DimensionMismatch {
            what: "trajectory",
            expected: n,
            found: traj.dim(),
        });
    }
    let mut path = TransitionMatrixPath::starting_at(n, traj.t_start());
    let mut m = path.matrix(0).to_vec();
    let mut stepper = Stepper::new(n * n, config)?;
    let mut x = vec![0.0; n];
    let mut lin = vec![0.0; n * n];
    let times = traj.times();
    for i in 0..times.len() - 1 {
        let (t0, t1) = (times[i], times[i + 1]);
        let (x0, x1) = (traj.state(i), traj.state(i + 1));
        let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let theta = (t - t0) / (t1 - t0);
            for j in 0..n {
                x[j] = x0[j] + theta * (x1[j] - x0[j]);
            }
            sys.linearization(&x, &mut lin);
            mat_mul(n, &lin, y, dy);
            Ok::<(), Infallible>(())
        };
        stepper
            .advance(&mut rhs, t0, t1, &mut m, &mut |_, _| Control::Continue)
            .map_err(OdeError::widen)?;
        path.push(t1, &m);
    }
    Ok(path)
}

/// `M(T)M(t)⁻¹` at every trajectory time, computed without any matrix
/// inverse by integrating `dN/dt = −N(A + Df)` backward from `N(T) = I`.
/// Returned in ascending time order.
pub fn final_propagators(
    sys: &NonlinearSystem,
    traj: &DenseOutput,
    config: &IntegratorConfig,
) -> Result<TransitionMatrixPath, SystemError> {
    let n = sys.dim();
    let times = traj.times();
    let t_end = traj.t_end();
    // Reversed time τ = T − t turns the backward problem into a forward one:
    // dN/dτ = N (A + Df(x(T − τ))).
    let mut reversed = TransitionMatrixPath::starting_at(n, 0.0);
    let mut big_n = reversed.matrix(0).to_vec();
    let mut stepper = Stepper::new(n * n, config)?;
    let mut x = vec![0.0; n];
    let mut lin = vec![0.0; n * n];
    for i in (1..times.len()).rev() {
        let (ta, tb) = (times[i], times[i - 1]);
        let (xa, xb) = (traj.state(i), traj.state(i - 1));
        let mut rhs = |tau: f64, y: &[f64], dy: &mut [f64]| {
            let t = t_end - tau;
            let theta = (ta - t) / (ta - tb);
            for j in 0..n {
                x[j] = xa[j] + theta * (xb[j] - xa[j]);
            }
            sys.linearization(&x, &mut lin);
            mat_mul(n, y, &lin, dy);
            Ok::<(), Infallible>(())
        };
        stepper
            .advance(&mut rhs, t_end - ta, t_end - tb, &mut big_n, &mut |_, _| Control::Continue)
            .map_err(OdeError::widen)?;
        reversed.push(t_end - tb, &big_n);
    }
    let mut path = TransitionMatrixPath {
        dim: n,
        grid: Vec::with_capacity(times.len()),
        matrices: Vec::with_capacity(times.len() * n * n),
    };
    for i in (0..reversed.len()).rev() {
        path.grid.push(times[times.len() - 1 - i]);
        path.matrices.extend_from_slice(reversed.matrix(i));
    }
    Ok(path)
}

/// State and transition matrix integrated jointly, sampled on the control
/// grid. This is what the optimizer evaluates at every homotopy step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub x_final: Vec<f64>,
    /// States at the control grid times, `n` entries per sample.
    pub states: Vec<f64>,
    pub propagators: TransitionMatrixPath,
}

pub fn sensitivity_sweep(
    sys: &NonlinearSystem,
    x0: &[f64],
    w: &ControlSignal,
    config: &IntegratorConfig,
) -> Result<Sweep, SystemError> {
    check_dims(sys, x0)?;
    let n = sys.dim();
    let nn = n * n;
    let mut y = vec![0.0; n + nn];
    y[..n].copy_from_slice(x0);
    for i in 0..n {
        y[n + i * n + i] = 1.0;
    }
    let mut propagators = TransitionMatrixPath::starting_at(n, 0.0);
    let mut states = Vec::with_capacity(w.len() * n);
    states.extend_from_slice(x0);
    let mut stepper = Stepper::new(n + nn, config)?;
    let mut lin = vec![0.0; nn];
    let samples = w.samples();
    for k in 0..samples.len() - 1 {
        let (t0, t1) = (w.time(k), w.time(k + 1));
        let (w0, slope) = (samples[k], (samples[k + 1] - samples[k]) / (t1 - t0));
        let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let (x, m) = y.split_at(n);
            let (dx, dm) = dy.split_at_mut(n);
            sys.vector_field(x, w0 + slope * (t - t0), dx);
            sys.linearization(x, &mut lin);
            mat_mul(n, &lin, m, dm);
            Ok::<(), Infallible>(())
        };
        stepper
            .advance(&mut rhs, t0, t1, &mut y, &mut |_, _| Control::Continue)
            .map_err(OdeError::widen)?;
        states.extend_from_slice(&y[..n]);
        propagators.push(t1, &y[n..]);
    }
    Ok(Sweep {
        x_final: y[..n].to_vec(),
        states,
        propagators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{endpoint_map, TrigSystem};
    use nalgebra::{DMatrix, DVector};

    fn rotation_system() -> NonlinearSystem {
        NonlinearSystem::linear(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn starts_at_identity_exactly() {
        let sys = TrigSystem {
            a: [[0.2, -0.5], [0.7, 0.1]],
            b: [0.3, 0.9],
            c1: [[0.05, 0.01], [0.0, -0.02]],
            s1: [[0.0, 0.03], [0.04, 0.0]],
            c2: [[0.01, 0.0], [0.0, 0.01]],
            s2: [[-0.02, 0.0], [0.01, 0.0]],
        }
        .to_system();
        let w = ControlSignal::from_fn(1.0, 33, |t| (3.0 * t).sin()).unwrap();
        let cfg = IntegratorConfig::default();
        let end = endpoint_map(&sys, &[0.1, -0.2], &w, &cfg).unwrap();
        let path = transition_matrix(&sys, &end.trajectory, &cfg).unwrap();
        assert_eq!(path.matrix(0), &[1.0, 0.0, 0.0, 1.0]);
        assert!(path.determinants().iter().all(|&d| d > 0.0));
        let sweep = sensitivity_sweep(&sys, &[0.1, -0.2], &w, &cfg).unwrap();
        assert_eq!(sweep.propagators.matrix(0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(sweep.propagators.len(), w.len());
        for (a, b) in sweep.x_final.iter().zip(&end.x_final) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in sweep.propagators.final_matrix().iter().zip(path.final_matrix()) {
            // Linear interpolation of the stored trajectory limits agreement.
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn rotation_propagator_is_rotation() {
        let sys = rotation_system();
        let w = ControlSignal::constant(2.0, 9, 0.0).unwrap();
        let cfg = IntegratorConfig::default();
        let end = endpoint_map(&sys, &[1.0, 0.0], &w, &cfg).unwrap();
        let path = transition_matrix(&sys, &end.trajectory, &cfg).unwrap();
        let m = path.final_matrix();
        let (s, c) = 2.0f64.sin_cos();
        let expected = [c, s, -s, c];
        for (a, b) in m.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_propagators_end_at_identity() {
        let sys = rotation_system();
        let w = ControlSignal::constant(1.0, 5, 0.3).unwrap();
        let cfg = IntegratorConfig::default();
        let end = endpoint_map(&sys, &[0.0, 0.0], &w, &cfg).unwrap();
        let back = final_propagators(&sys, &end.trajectory, &cfg).unwrap();
        assert_eq!(back.len(), end.trajectory.len());
        assert_eq!(back.final_matrix(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(back.grid(), end.trajectory.times());
        // N(0) = M(T) = rotation by T.
        let (s, c) = 1.0f64.sin_cos();
        for (a, b) in back.matrix(0).iter().zip([c, s, -s, c]) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
