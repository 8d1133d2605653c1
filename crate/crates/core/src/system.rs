//! Control signals, first-order control systems `ẋ = Ax + Bw(t) + f(x)` and
//! the end-point map.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::spectral_norm2;
use crate::odeint::{Control, DenseOutput, IntegratorConfig, OdeError, Stepper};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("time {t} outside the control interval [0, {t_final}]")]
    OutOfDomain { t: f64, t_final: f64 },
    #[error("invalid control signal: {0}")]
    InvalidControl(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
}

/// A scalar control sampled on the uniform grid `k·T/(N−1)`, `k = 0..N`,
/// and linearly interpolated between samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawControl", into = "RawControl")]
pub struct ControlSignal {
    t_final: f64,
    samples: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    #[serde(rename = "T")]
    t_final: f64,
    samples: Vec<f64>,
}

impl TryFrom<RawControl> for ControlSignal {
    type Error = SystemError;
    fn try_from(raw: RawControl) -> Result<Self, Self::Error> {
        ControlSignal::new(raw.t_final, raw.samples)
    }
}

impl From<ControlSignal> for RawControl {
    fn from(c: ControlSignal) -> Self {
        RawControl {
            t_final: c.t_final,
            samples: c.samples,
        }
    }
}

impl ControlSignal {
    pub fn new(t_final: f64, samples: Vec<f64>) -> Result<Self, SystemError> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(SystemError::InvalidControl(format!("final time {t_final} must be positive")));
        }
        if samples.len() < 2 {
            return Err(SystemError::InvalidControl(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite("control samples"));
        }
        Ok(Self { t_final, samples })
    }

    pub fn constant(t_final: f64, n: usize, value: f64) -> Result<Self, SystemError> {
        Self::new(t_final, vec![value; n])
    }

    /// Samples `f` at the grid times.
    pub fn from_fn(t_final: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, SystemError> {
        let h = t_final / (n.max(2) - 1) as f64;
        Self::new(t_final, (0..n).map(|k| f(k as f64 * h)).collect())
    }

    /// Same grid, new sample values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self, SystemError> {
        if samples.len() != self.samples.len() {
            return Err(SystemError::DimensionMismatch {
                what: "control samples",
                expected: self.samples.len(),
                found: samples.len(),
            });
        }
        Self::new(self.t_final, samples)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Grid spacing `T/(N−1)`.
    pub fn step(&self) -> f64 {
        self.t_final / (self.samples.len() - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.samples.len() {
            self.t_final
        } else {
            k as f64 * self.step()
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn evaluate(&self, t: f64) -> Result<f64, SystemError> {
        if !(0.0..=self.t_final).contains(&t) {
            return Err(SystemError::OutOfDomain {
                t,
                t_final: self.t_final,
            });
        }
        let h = self.step();
        let k = ((t / h).floor() as usize).min(self.samples.len() - 2);
        let theta = (t - self.time(k)) / h;
        let (a, b) = (self.samples[k], self.samples[k + 1]);
        Ok(a + theta * (b - a))
    }

    /// Trapezoid weights: `∫ w dt = Σ q_k w_k` exactly for the interpolant.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let h = self.step();
        let n = self.len();
        (0..n)
            .map(|k| if k == 0 || k + 1 == n { 0.5 * h } else { h })
            .collect()
    }

    pub fn integral(&self) -> f64 {
        self.quadrature_weights().iter().zip(&self.samples).map(|(q, w)| q * w).sum()
    }

    /// Root-mean-square of the samples.
    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.len() as f64).sqrt()
    }
}

/// State-only nonlinear part `f: ℝⁿ → ℝⁿ` together with its Jacobian.
pub trait Nonlinearity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Writes `Df(x)` row-major into `out` (`n²` entries).
    fn jacobian(&self, x: &[f64], out: &mut [f64]);

    /// Analytic bound on `sup ‖f(x)‖`, if one is known.
    fn sup_bound(&self) -> Option<f64> {
        None
    }

    /// Analytic bound on `sup ‖Df(x)‖` (spectral norm), if one is known.
    fn jacobian_sup_bound(&self) -> Option<f64> {
        None
    }
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub dim: usize,
}

impl Nonlinearity for Linear {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn sup_bound(&self) -> Option<f64> {
        Some(0.0)
    }
    fn jacobian_sup_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `ẋ = Ax + Bw(t) + f(x)` with a single control channel.
#[derive(Debug, Clone)]
pub struct NonlinearSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    f: Arc<dyn Nonlinearity>,
}

impl NonlinearSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, f: Arc<dyn Nonlinearity>) -> Result<Self, SystemError> {
        let n = b.len();
        if n == 0 {
            return Err(SystemError::DimensionMismatch {
                what: "B",
                expected: 1,
                found: 0,
            });
        }
        for (what, found) in [("A rows", a.nrows()), ("A columns", a.ncols()), ("f", f.dim())] {
            if found != n {
                return Err(SystemError::DimensionMismatch { what, expected: n, found });
            }
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite("A or B"));
        }
        Ok(Self { a, b, f })
    }

    pub fn linear(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, SystemError> {
        let dim = b.len();
        Self::new(a, b, Arc::new(Linear { dim }))
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn nonlinearity(&self) -> &dyn Nonlinearity {
        self.f.as_ref()
    }

    /// `ẋ = Ax + Bw + f(x)` written into `dx`.
    pub fn vector_field(&self, x: &[f64], w: f64, dx: &mut [f64]) {
        self.f.eval(x, dx);
        let n = self.dim();
        for i in 0..n {
            let mut s = self.b[i] * w;
            for j in 0..n {
                s += self.a[(i, j)] * x[j];
            }
            dx[i] += s;
        }
    }

    /// Row-major `A + Df(x)` written into `out`.
    pub fn linearization(&self, x: &[f64], out: &mut [f64]) {
        self.f.jacobian(x, out);
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += self.a[(i, j)];
            }
        }
    }

    /// Largest relative discrepancy between `Df` and central finite
    /// differences of `f` over the given points, with step `1e-6·(1+‖x‖)`.
    /// Relative to `max(1, ‖Df(x)‖_max)` so vanishing entries do not blow up.
    pub fn jacobian_discrepancy<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        let n = self.dim();
        let mut jac = vec![0.0; n * n];
        let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
        let mut worst = 0.0f64;
        for x in points {
            self.f.jacobian(x, &mut jac);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = 1e-6 * (1.0 + norm);
            let scale = jac.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut xp = x.to_vec();
            for j in 0..n {
                xp[j] = x[j] + h;
                self.f.eval(&xp, &mut fp);
                xp[j] = x[j] - h;
                self.f.eval(&xp, &mut fm);
                xp[j] = x[j];
                for i in 0..n {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    worst = worst.max((fd - jac[i * n + j]).abs() / scale);
                }
            }
        }
        worst
    }
}

type Mat2 = [[f64; 2]; 2];

fn to_matrix(m: &Mat2) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

/// The planar trigonometric family
/// `f(x) = C1·cos x + S1·sin x + C2·cos 2x + S2·sin 2x` (applied componentwise).
///
/// Matrices are stored row-major, matching the JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigSystem {
    #[serde(rename = "A")]
    pub a: Mat2,
    #[serde(rename = "B")]
    pub b: [f64; 2],
    #[serde(rename = "C1", default)]
    pub c1: Mat2,
    #[serde(rename = "S1", default)]
    pub s1: Mat2,
    #[serde(rename = "C2", default)]
    pub c2: Mat2,
    #[serde(rename = "S2", default)]
    pub s2: Mat2,
}

impl TrigSystem {
    /// Linear planar system with all trigonometric coefficients zero.
    pub fn linear(a: Mat2, b: [f64; 2]) -> Self {
        Self {
            a,
            b,
            c1: [[0.0; 2]; 2],
            s1: [[0.0; 2]; 2],
            c2: [[0.0; 2]; 2],
            s2: [[0.0; 2]; 2],
        }
    }

    pub fn a_matrix(&self) -> Matrix2<f64> {
        to_matrix(&self.a)
    }

    pub fn b_vector(&self) -> Vector2<f64> {
        Vector2::new(self.b[0], self.b[1])
    }

    pub fn nonlinear_part(&self) -> TrigNonlinearity {
        TrigNonlinearity {
            c1: to_matrix(&self.c1),
            s1: to_matrix(&self.s1),
            c2: to_matrix(&self.c2),
            s2: to_matrix(&self.s2),
        }
    }

    pub fn to_system(&self) -> NonlinearSystem {
        let a = DMatrix::from_row_slice(2, 2, &[self.a[0][0], self.a[0][1], self.a[1][0], self.a[1][1]]);
        let b = DVector::from_column_slice(&self.b);
        NonlinearSystem::new(a, b, Arc::new(self.nonlinear_part())).expect("planar dimensions agree")
    }

    pub fn is_finite(&self) -> bool {
        [self.a, self.c1, self.s1, self.c2, self.s2]
            .iter()
            .flatten()
            .flatten()
            .chain(&self.b)
            .all(|v| v.is_finite())
    }
}

impl From<&TrigSystem> for NonlinearSystem {
    fn from(t: &TrigSystem) -> Self {
        t.to_system()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigNonlinearity {
    pub c1: Matrix2<f64>,
    pub s1: Matrix2<f64>,
    pub c2: Matrix2<f64>,
    pub s2: Matrix2<f64>,
}

impl TrigNonlinearity {
    /// `2(‖C1‖ + ‖S1‖ + ‖C2‖ + ‖S2‖)` in the spectral norm.
    pub fn value_bound(&self) -> f64 {
        2.0 * (spectral_norm2(&self.c1) + spectral_norm2(&self.s1) + spectral_norm2(&self.c2) + spectral_norm2(&self.s2))
    }

    /// `√2(‖C1‖ + ‖S1‖ + 2‖C2‖ + 2‖S2‖)` in the spectral norm.
    pub fn jacobian_bound(&self) -> f64 {
        std::f64::consts::SQRT_2
            * (spectral_norm2(&self.c1)
                + spectral_norm2(&self.s1)
                + 2.0 * spectral_norm2(&self.c2)
                + 2.0 * spectral_norm2(&self.s2))
    }
}

impl Nonlinearity for TrigNonlinearity {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (s0, c0) = x[0].sin_cos();
        let (s1, c1) = x[1].sin_cos();
        // Double angles from the single-angle values.
        let (s20, c20) = (2.0 * s0 * c0, c0 * c0 - s0 * s0);
        let (s21, c21) = (2.0 * s1 * c1, c1 * c1 - s1 * s1);
        for (i, o) in out.iter_mut().enumerate().take(2) {
            *o = self.c1[(i, 0)] * c0
                + self.c1[(i, 1)] * c1
                + self.s1[(i, 0)] * s0
                + self.s1[(i, 1)] * s1
                + self.c2[(i, 0)] * c20
                + self.c2[(i, 1)] * c21
                + self.s2[(i, 0)] * s20
                + self.s2[(i, 1)] * s21;
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let (s0, c0) = x[0].sin_cos();
        let (s1, c1) = x[1].sin_cos();
        let (s20, c20) = (2.0 * s0 * c0, c0 * c0 - s0 * s0);
        let (s21, c21) = (2.0 * s1 * c1, c1 * c1 - s1 * s1);
        // Column j scales by d/dx_j of the j-th component of each basis vector.
        let d = [
            [-s0, c0, -2.0 * s20, 2.0 * c20],
            [-s1, c1, -2.0 * s21, 2.0 * c21],
        ];
        for i in 0..2 {
            for j in 0..2 {
                out[i * 2 + j] = self.c1[(i, j)] * d[j][0]
                    + self.s1[(i, j)] * d[j][1]
                    + self.c2[(i, j)] * d[j][2]
                    + self.s2[(i, j)] * d[j][3];
            }
        }
    }

    fn sup_bound(&self) -> Option<f64> {
        Some(self.value_bound())
    }

    fn jacobian_sup_bound(&self) -> Option<f64> {
        Some(self.jacobian_bound())
    }
}

/// Target state `G` of the fidelity `Φ = −‖x(T) − G‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Goal(pub Vec<f64>);

impl Goal {
    pub fn new(point: Vec<f64>) -> Result<Self, SystemError> {
        if point.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite("goal"));
        }
        Ok(Self(point))
    }

    pub fn point(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.0)
            .map(|(a, g)| (a - g) * (a - g))
            .sum::<f64>()
            .sqrt()
    }
}

/// `Φ = −‖x_final − G‖`; maximal (zero) exactly at the goal.
pub fn fidelity(x_final: &[f64], goal: &Goal) -> f64 {
    debug_assert_eq!(x_final.len(), goal.0.len());
    -goal.distance(x_final)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub x_final: Vec<f64>,
    pub trajectory: DenseOutput,
}

pub(crate) fn check_dims(sys: &NonlinearSystem, x0: &[f64]) -> Result<(), SystemError> {
    if x0.len() != sys.dim() {
        return Err(SystemError::DimensionMismatch {
            what: "initial state",
            expected: sys.dim(),
            found: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFinite("initial state"));
    }
    Ok(())
}

/// Integrates the controlled system one control interval at a time, so the
/// integrator never steps across a kink of the interpolated control.
fn propagate(
    sys: &NonlinearSystem,
    x0: &[f64],
    w: &ControlSignal,
    config: &IntegratorConfig,
    mut observer: impl FnMut(f64, &[f64]),
) -> Result<Vec<f64>, SystemError> {
    check_dims(sys, x0)?;
    let mut stepper = Stepper::new(sys.dim(), config)?;
    let mut x = x0.to_vec();
    let samples = w.samples();
    for k in 0..samples.len() - 1 {
        let (t0, t1) = (w.time(k), w.time(k + 1));
        let (w0, slope) = (samples[k], (samples[k + 1] - samples[k]) / (t1 - t0));
        let mut rhs = |t: f64, x: &[f64], dx: &mut [f64]| {
            sys.vector_field(x, w0 + slope * (t - t0), dx);
            Ok::<(), std::convert::Infallible>(())
        };
        stepper
            .advance(&mut rhs, t0, t1, &mut x, &mut |t, x| {
                observer(t, x);
                Control::Continue
            })
            .map_err(OdeError::widen)?;
    }
    Ok(x)
}

/// The end-point map `V_T`: state `x(T)` reached from `x0` under `w`, with
/// the full trajectory.
pub fn endpoint_map(
    sys: &NonlinearSystem,
    x0: &[f64],
    w: &ControlSignal,
    config: &IntegratorConfig,
) -> Result<Endpoint, SystemError> {
    let mut trajectory = DenseOutput::new(0.0, x0);
    let x_final = propagate(sys, x0, w, config, |t, x| trajectory.push(t, x))?;
    Ok(Endpoint { x_final, trajectory })
}

/// `x(T)` only, without recording the trajectory.
pub fn final_state(
    sys: &NonlinearSystem,
    x0: &[f64],
    w: &ControlSignal,
    config: &IntegratorConfig,
) -> Result<Vec<f64>, SystemError> {
    propagate(sys, x0, w, config, |_, _| {})
}
