//! Analytic certificates for the three trap-freedom assumptions:
//!
//! | assumption              | certificate                                              |
//! |-------------------------|----------------------------------------------------------|
//! | fixed-time controllable | full Kalman rank of `(A, B)` and a bounded `f`           |
//! | locally controllable    | `sup ‖Df‖ < m(A,B)/‖B‖` (planar) or a rank check along a trajectory |
//! | unrestricted controls   | holds by construction: controls are never bounded here   |
//!
//! All matrix norms are spectral norms.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::numerical_rank;
use crate::odeint::DenseOutput;
use crate::system::{NonlinearSystem, TrigSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("control vector B is zero")]
    ZeroInput,
}

/// `[B, AB, …, A^(n−1)B]`.
pub fn kalman_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = b.len();
    let mut k = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        k.set_column(j, &col);
        col = a * &col;
    }
    k
}

/// Numerical rank of the Kalman matrix and whether it is full.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> (usize, bool) {
    let rank = numerical_rank(&kalman_matrix(a, b));
    (rank, rank == b.len())
}

/// `m(A,B) = ‖AB − λ*B‖/‖B‖` with `λ* = ⟨AB,B⟩/‖B‖²`: the distance from `AB`
/// to the span of `B`, relative to `‖B‖`. Scale invariant in `B`.
pub fn margin_numerator(a: &Matrix2<f64>, b: &Vector2<f64>) -> Result<f64, CertifyError> {
    let bb = b.norm_squared();
    if bb == 0.0 {
        return Err(CertifyError::ZeroInput);
    }
    let ab = a * b;
    let lambda = ab.dot(b) / bb;
    Ok((ab - b * lambda).norm() / bb.sqrt())
}

/// The planar Lipschitz threshold `m(A,B)/‖B‖`: `‖Df‖` below it certifies
/// local controllability.
pub fn local_margin(a: &Matrix2<f64>, b: &Vector2<f64>) -> Result<f64, CertifyError> {
    Ok(margin_numerator(a, b)? / b.norm())
}

/// `2(‖C1‖ + ‖S1‖ + ‖C2‖ + ‖S2‖)`, a bound on `sup ‖f‖`.
pub fn trig_nonlinear_bound(sys: &TrigSystem) -> f64 {
    sys.nonlinear_part().value_bound()
}

/// `√2(‖C1‖ + ‖S1‖ + 2‖C2‖ + 2‖S2‖)`, a bound on `sup ‖Df‖`.
pub fn trig_df_bound(sys: &TrigSystem) -> f64 {
    sys.nonlinear_part().jacobian_bound()
}

/// Result of checking the time-varying Kalman matrix
/// `[B, (A+Df(x(t)))B, …]` at every sample of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheck {
    pub passed: bool,
    pub samples_checked: usize,
    /// Smallest rank seen along the trajectory.
    pub min_rank: usize,
    /// First sample time where the rank dropped, if any.
    pub first_failure_time: Option<f64>,
    /// Smallest `σ_min/σ_max` of the Kalman matrix over the samples.
    pub min_relative_singular_value: f64,
}

pub fn trajectory_kalman_check(sys: &NonlinearSystem, traj: &DenseOutput) -> TrajectoryCheck {
    let n = sys.dim();
    let mut lin = vec![0.0; n * n];
    let mut check = TrajectoryCheck {
        passed: true,
        samples_checked: 0,
        min_rank: n,
        first_failure_time: None,
        min_relative_singular_value: f64::INFINITY,
    };
    for (t, x) in traj.iter() {
        sys.linearization(x, &mut lin);
        let a_t = DMatrix::from_row_slice(n, n, &lin);
        let k = kalman_matrix(&a_t, sys.b());
        let rank = numerical_rank(&k);
        let sv = k.singular_values();
        let rel = if sv.max() > 0.0 { sv.min() / sv.max() } else { 0.0 };
        check.samples_checked += 1;
        check.min_relative_singular_value = check.min_relative_singular_value.min(rel);
        check.min_rank = check.min_rank.min(rank);
        if rank < n && check.passed {
            check.passed = false;
            check.first_failure_time = Some(t);
        }
    }
    check
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub dim: usize,
    pub norm: String,
    pub kalman_rank: usize,
    pub controllable_linear_part: bool,
    /// Bound on `sup ‖f‖`; absent when no analytic bound is known.
    pub nonlinear_bound: Option<f64>,
    pub fixed_time_controllable: bool,
    /// `m(A,B)/‖B‖`, planar systems only.
    pub local_margin: Option<f64>,
    /// Bound on `sup ‖Df‖`; absent when no analytic bound is known.
    pub df_bound: Option<f64>,
    pub local_controllability_certified: bool,
    pub unrestricted_controls: bool,
    pub trajectory_check: Option<TrajectoryCheck>,
}

impl CertificateReport {
    pub fn all_passed(&self) -> bool {
        self.fixed_time_controllable && self.local_controllability_certified && self.unrestricted_controls
    }
}

/// Assembles every certificate for `sys`. The optional trajectory enables
/// the rank-along-trajectory route, the only local-controllability check
/// available beyond two dimensions.
pub fn certify(sys: &NonlinearSystem, trajectory: Option<&DenseOutput>) -> CertificateReport {
    let n = sys.dim();
    let (kalman_rank, controllable) = controllability_rank(sys.a(), sys.b());
    let nonlinear_bound = sys.nonlinearity().sup_bound();
    let df_bound = sys.nonlinearity().jacobian_sup_bound();
    let local_margin = (n == 2)
        .then(|| {
            let a = Matrix2::from_iterator(sys.a().iter().copied());
            let b = Vector2::new(sys.b()[0], sys.b()[1]);
            local_margin(&a, &b).ok()
        })
        .flatten();
    let trajectory_check = trajectory.map(|t| trajectory_kalman_check(sys, t));
    let analytic = matches!((df_bound, local_margin), (Some(d), Some(m)) if d < m);
    let along_trajectory = trajectory_check.as_ref().is_some_and(|c| c.passed);
    CertificateReport {
        dim: n,
        norm: "spectral".to_string(),
        kalman_rank,
        controllable_linear_part: controllable,
        nonlinear_bound,
        fixed_time_controllable: controllable && nonlinear_bound.is_some_and(f64::is_finite),
        local_margin,
        df_bound,
        local_controllability_certified: analytic || along_trajectory,
        unrestricted_controls: true,
        trajectory_check,
    }
}

pub fn certify_trig(sys: &TrigSystem) -> CertificateReport {
    certify(&sys.to_system(), None)
}
