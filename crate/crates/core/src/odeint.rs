//! Explicit Runge-Kutta integration.
//!
//! Two methods are provided: the adaptive Dormand-Prince 5(4) embedded pair
//! with Hairer-style scaled RMS error control, and classical fixed-step RK4.
//! Results are recorded as a [`DenseOutput`] holding every accepted step,
//! evaluated between steps by linear interpolation.
//!
//! The right-hand side writes into a caller-provided buffer,
//! `rhs(t, x, dx)`, so the hot loops in the optimizer never allocate.

use std::convert::Infallible;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AdaptiveRk45,
    FixedRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// First trial step of the adaptive method (estimated from the
    /// right-hand side when absent); the step length of the fixed method.
    pub initial_step: Option<f64>,
    /// Budget of attempted steps, accepted and rejected.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::AdaptiveRk45,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            initial_step: None,
            max_steps: 100_000,
        }
    }
}

impl IntegratorConfig {
    pub fn adaptive(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn fixed(step: f64) -> Self {
        Self {
            method: Method::FixedRk4,
            initial_step: Some(step),
            max_steps: usize::MAX,
            ..Self::default()
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Error allowance for a state of the given Euclidean norm.
    pub fn tolerance_at(&self, norm: f64) -> f64 {
        self.rel_tol * norm + self.abs_tol
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |msg: &str| Err(OdeError::InvalidConfig(msg.to_string()));
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return bad("rel_tol must be positive");
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return bad("abs_tol must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        match (self.method, self.initial_step) {
            (_, Some(h)) if !(h > 0.0 && h.is_finite()) => bad("initial_step must be positive"),
            (Method::FixedRk4, None) => bad("fixed-rk4 requires initial_step"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError<E = Infallible> {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid time span [{t0}, {t1}]")]
    InvalidSpan { t0: f64, t1: f64 },
    #[error("step size underflow after t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget of {max_steps} exhausted after t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("right-hand side failed at t = {t}: {source}")]
    Rhs { t: f64, source: E },
}

impl OdeError<Infallible> {
    /// Widens an error from an infallible right-hand side.
    pub fn widen<E>(self) -> OdeError<E> {
        match self {
            OdeError::InvalidConfig(m) => OdeError::InvalidConfig(m),
            OdeError::InvalidSpan { t0, t1 } => OdeError::InvalidSpan { t0, t1 },
            OdeError::StepUnderflow { t } => OdeError::StepUnderflow { t },
            OdeError::MaxSteps { t, max_steps } => OdeError::MaxSteps { t, max_steps },
            OdeError::Rhs { source, .. } => match source {},
        }
    }
}

impl<E> OdeError<E> {
    /// Last time the solution was known to be good, when the failure
    /// happened mid-integration.
    pub fn last_good_time(&self) -> Option<f64> {
        match self {
            OdeError::StepUnderflow { t } | OdeError::MaxSteps { t, .. } | OdeError::Rhs { t, .. } => {
                Some(*t)
            }
            _ => None,
        }
    }
}

/// Accepted steps of an integration, linearly interpolated in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseOutput {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl DenseOutput {
    pub fn new(t0: f64, x0: &[f64]) -> Self {
        Self {
            dim: x0.len(),
            times: vec![t0],
            values: x0.to_vec(),
        }
    }

    /// Appends a sample; times must keep moving in one direction.
    pub fn push(&mut self, t: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert!(t != self.t_end() && (self.len() < 2 || (t > self.t_end()) == self.is_forward()));
        self.times.push(t);
        self.values.extend_from_slice(x);
    }

    /// Concatenates an output that starts where this one ends.
    pub fn extend(&mut self, other: &DenseOutput) {
        debug_assert_eq!(self.dim, other.dim);
        for i in 0..other.len() {
            let t = other.times[i];
            if t > self.t_end() {
                self.push(t, other.state(i));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether time increases along the samples (true for a single sample).
    pub fn is_forward(&self) -> bool {
        self.t_end() >= self.t_start()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("dense output is never empty")
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times.iter().copied().zip(self.values.chunks_exact(self.dim))
    }

    /// Linear interpolation at `t`; `None` outside the covered interval.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) -> Option<()> {
        let forward = self.is_forward();
        let (lo_t, hi_t) = if forward { (self.t_start(), self.t_end()) } else { (self.t_end(), self.t_start()) };
        if !(t >= lo_t && t <= hi_t) {
            return None;
        }
        let hi = if forward {
            self.times.partition_point(|&s| s < t)
        } else {
            self.times.partition_point(|&s| s > t)
        };
        if self.times[hi] == t {
            out.copy_from_slice(self.state(hi));
            return Some(());
        }
        let lo = hi - 1;
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let theta = (t - t0) / (t1 - t0);
        let (x0, x1) = (self.state(lo), self.state(hi));
        for ((o, a), b) in out.iter_mut().zip(x0).zip(x1) {
            *o = a + theta * (b - a);
        }
        Some(())
    }

    pub fn at(&self, t: f64) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.interpolate(t, &mut out).map(|_| out)
    }
}

/// Returned by step observers to continue or halt an integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Fifth-order weights minus the embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Stepping state that persists across adjoining spans, so piecewise
/// integration (e.g. across the kinks of a sampled control) keeps its
/// step-size history and a single step budget.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: IntegratorConfig,
    dim: usize,
    h: Option<f64>,
    steps: usize,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    next: Vec<f64>,
}

impl Stepper {
    pub fn new(dim: usize, cfg: &IntegratorConfig) -> Result<Self, OdeError> {
        cfg.validate()?;
        Ok(Self {
            cfg: *cfg,
            dim,
            h: cfg.initial_step,
            steps: 0,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            next: vec![0.0; dim],
        })
    }

    /// Attempted steps so far, accepted and rejected.
    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Advances `y` in place from `t0` to `t1`, calling `observer` after
    /// every accepted step. Returns the time reached, which is `t1` unless
    /// the observer stopped early.
    pub fn advance<F, E, O>(
        &mut self,
        rhs: &mut F,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        observer: &mut O,
    ) -> Result<f64, OdeError<E>>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
        O: FnMut(f64, &[f64]) -> Control,
    {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(OdeError::InvalidSpan { t0, t1 });
        }
        debug_assert_eq!(y.len(), self.dim);
        match self.cfg.method {
            Method::AdaptiveRk45 => self.advance_adaptive(rhs, t0, t1, y, observer),
            Method::FixedRk4 => self.advance_fixed(rhs, t0, t1, y, observer),
        }
    }

    fn advance_fixed<F, E, O>(
        &mut self,
        rhs: &mut F,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        observer: &mut O,
    ) -> Result<f64, OdeError<E>>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
        O: FnMut(f64, &[f64]) -> Control,
    {
        let step = self.cfg.initial_step.expect("validated");
        let n = (((t1 - t0) / step) - 1e-9).ceil().max(1.0) as usize;
        let h = (t1 - t0) / n as f64;
        let dim = self.dim;
        let mut t = t0;
        for i in 0..n {
            if self.steps >= self.cfg.max_steps {
                return Err(OdeError::MaxSteps {
                    t,
                    max_steps: self.cfg.max_steps,
                });
            }
            self.steps += 1;
            let [k1, k2, k3, k4, ..] = &mut self.k;
            let tmp = &mut self.tmp;
            eval(rhs, t, y, k1)?;
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k1[j];
            }
            eval(rhs, t + 0.5 * h, tmp, k2)?;
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k2[j];
            }
            eval(rhs, t + 0.5 * h, tmp, k3)?;
            for j in 0..dim {
                tmp[j] = y[j] + h * k3[j];
            }
            eval(rhs, t + h, tmp, k4)?;
            for j in 0..dim {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            t = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
            if observer(t, y) == Control::Stop {
                return Ok(t);
            }
        }
        Ok(t1)
    }

    fn advance_adaptive<F, E, O>(
        &mut self,
        rhs: &mut F,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        observer: &mut O,
    ) -> Result<f64, OdeError<E>>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
        O: FnMut(f64, &[f64]) -> Control,
    {
        let dim = self.dim;
        let (rtol, atol) = (self.cfg.rel_tol, self.cfg.abs_tol);
        let mut t = t0;
        eval(rhs, t, y, &mut self.k[0])?;
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(rhs, t, y, t1 - t0)?,
        };
        let mut rejected_last = false;

        loop {
            if self.steps >= self.cfg.max_steps {
                return Err(OdeError::MaxSteps {
                    t,
                    max_steps: self.cfg.max_steps,
                });
            }
            let remaining = t1 - t;
            let clipped = h >= remaining * (1.0 - 1e-12);
            let h_try = if clipped { remaining } else { h };
            if !(h_try > 16.0 * f64::EPSILON * t.abs().max(1.0)) {
                return Err(OdeError::StepUnderflow { t });
            }
            self.steps += 1;

            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let tmp = &mut self.tmp;
            let next = &mut self.next;
            for j in 0..dim {
                tmp[j] = y[j] + h_try * A21 * k1[j];
            }
            eval(rhs, t + C2 * h_try, tmp, k2)?;
            for j in 0..dim {
                tmp[j] = y[j] + h_try * (A31 * k1[j] + A32 * k2[j]);
            }
            eval(rhs, t + C3 * h_try, tmp, k3)?;
            for j in 0..dim {
                tmp[j] = y[j] + h_try * (A41 * k1[j] + A42 * k2[j] + A43 * k3[j]);
            }
            eval(rhs, t + C4 * h_try, tmp, k4)?;
            for j in 0..dim {
                tmp[j] = y[j] + h_try * (A51 * k1[j] + A52 * k2[j] + A53 * k3[j] + A54 * k4[j]);
            }
            eval(rhs, t + C5 * h_try, tmp, k5)?;
            for j in 0..dim {
                tmp[j] = y[j]
                    + h_try
                        * (A61 * k1[j] + A62 * k2[j] + A63 * k3[j] + A64 * k4[j] + A65 * k5[j]);
            }
            eval(rhs, t + h_try, tmp, k6)?;
            for j in 0..dim {
                next[j] = y[j]
                    + h_try
                        * (A71 * k1[j] + A73 * k3[j] + A74 * k4[j] + A75 * k5[j] + A76 * k6[j]);
            }
            let t_new = if clipped { t1 } else { t + h_try };
            eval(rhs, t_new, next, k7)?;

            let mut acc = 0.0;
            for j in 0..dim {
                let e = h_try
                    * (E1 * k1[j] + E3 * k3[j] + E4 * k4[j] + E5 * k5[j] + E6 * k6[j] + E7 * k7[j]);
                let scale = atol + rtol * y[j].abs().max(next[j].abs());
                acc += (e / scale).powi(2);
            }
            let err = (acc / dim.max(1) as f64).sqrt();

            if err.is_finite() && err <= 1.0 {
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                if rejected_last {
                    factor = factor.min(1.0);
                }
                rejected_last = false;
                let proposal = h_try * factor;
                h = if clipped { proposal.max(h) } else { proposal };
                self.h = Some(h);
                t = t_new;
                y.copy_from_slice(next);
                let [k1, .., k7] = &mut self.k;
                std::mem::swap(k1, k7);
                if observer(t, y) == Control::Stop || clipped {
                    return Ok(t);
                }
            } else {
                let factor = if err.is_finite() {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
                } else {
                    MIN_FACTOR
                };
                rejected_last = true;
                h = h_try * factor;
            }
        }
    }

    // Hairer-Norsett-Wanner starting step heuristic; expects f(t, y) in k[0].
    fn initial_step<F, E>(&mut self, rhs: &mut F, t: f64, y: &[f64], span: f64) -> Result<f64, OdeError<E>>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    {
        let dim = self.dim;
        let (rtol, atol) = (self.cfg.rel_tol, self.cfg.abs_tol);
        let scaled_norm = |v: &[f64]| {
            let s: f64 = v
                .iter()
                .zip(y)
                .map(|(vi, yi)| (vi / (atol + rtol * yi.abs())).powi(2))
                .sum();
            (s / dim.max(1) as f64).sqrt()
        };
        let d0 = scaled_norm(y);
        let d1 = scaled_norm(&self.k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        for j in 0..dim {
            self.tmp[j] = y[j] + h0 * self.k[0][j];
        }
        eval(rhs, t + h0, &self.tmp, &mut self.k[1])?;
        let diff: Vec<f64> = (0..dim).map(|j| self.k[1][j] - self.k[0][j]).collect();
        let d2 = scaled_norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span))
    }
}

fn eval<F, E>(rhs: &mut F, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), OdeError<E>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    rhs(t, x, dx).map_err(|source| OdeError::Rhs { t, source })
}

/// Integrates `dx/dt = rhs(t, x)` over `t_span`, recording every accepted step.
/// A span with `t1 < t0` integrates backward in time.
pub fn integrate<F>(
    mut rhs: F,
    x0: &[f64],
    t_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<DenseOutput, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    try_integrate(
        |t, x, dx| {
            rhs(t, x, dx);
            Ok::<(), Infallible>(())
        },
        x0,
        t_span,
        config,
    )
}

/// [`integrate`] for a right-hand side that can fail.
pub fn try_integrate<F, E>(
    mut rhs: F,
    x0: &[f64],
    t_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<DenseOutput, OdeError<E>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let (t0, t1) = t_span;
    let mut stepper = Stepper::new(x0.len(), config).map_err(OdeError::widen)?;
    let mut out = DenseOutput::new(t0, x0);
    let mut y = x0.to_vec();
    if t1 < t0 {
        // Reversed span: integrate dx/dτ = −rhs(−τ, x) over [−t0, −t1].
        let mut reversed = |tau: f64, x: &[f64], dx: &mut [f64]| {
            rhs(-tau, x, dx)?;
            dx.iter_mut().for_each(|v| *v = -*v);
            Ok(())
        };
        stepper
            .advance(&mut reversed, -t0, -t1, &mut y, &mut |tau, x| {
                out.push(-tau, x);
                Control::Continue
            })
            .map_err(|e| match e {
                OdeError::InvalidSpan { .. } => OdeError::InvalidSpan { t0, t1 },
                OdeError::StepUnderflow { t } => OdeError::StepUnderflow { t: -t },
                OdeError::MaxSteps { t, max_steps } => OdeError::MaxSteps { t: -t, max_steps },
                OdeError::Rhs { t, source } => OdeError::Rhs { t: -t, source },
                other => other,
            })?;
        return Ok(out);
    }
    stepper.advance(&mut rhs, t0, t1, &mut y, &mut |t, x| {
        out.push(t, x);
        Control::Continue
    })?;
    Ok(out)
}
