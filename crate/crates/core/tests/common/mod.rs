//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use control_landscape::experiment::{generate_initial_control, generate_system, Noise, ProtocolConfig};
use control_landscape::{ControlSignal, TrigSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// `exp(A)` by scaling and squaring with a 20-term Taylor series.
pub fn expm(a: &Mat) -> Mat {
    let n = a.len();
    let norm: f64 = a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let scaled: Mat = a.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=20 {
        term = matmul(&term, &scaled);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Planar trig dynamics written out directly from the component formula.
pub fn trig_field(sys: &TrigSystem, x: &[f64; 2], w: f64) -> [f64; 2] {
    let (c, s) = ([x[0].cos(), x[1].cos()], [x[0].sin(), x[1].sin()]);
    let (c2, s2) = ([(2.0 * x[0]).cos(), (2.0 * x[1]).cos()], [(2.0 * x[0]).sin(), (2.0 * x[1]).sin()]);
    let mut out = [0.0; 2];
    for (i, o) in out.iter_mut().enumerate() {
        *o = sys.a[i][0] * x[0] + sys.a[i][1] * x[1] + sys.b[i] * w;
        for j in 0..2 {
            *o += sys.c1[i][j] * c[j] + sys.s1[i][j] * s[j] + sys.c2[i][j] * c2[j] + sys.s2[i][j] * s2[j];
        }
    }
    out
}

/// `f(x)` alone.
pub fn trig_f(sys: &TrigSystem, x: &[f64; 2]) -> [f64; 2] {
    let zero = TrigSystem { a: [[0.0; 2]; 2], b: [0.0; 2], ..sys.clone() };
    trig_field(&zero, x, 0.0)
}

/// Classical RK4 with `substeps` equal steps per control interval; `visit`
/// sees the state after every step.
pub fn rk4_walk(sys: &TrigSystem, x0: [f64; 2], w: &ControlSignal, substeps: usize, mut visit: impl FnMut(&[f64; 2])) -> [f64; 2] {
    let mut x = x0;
    let samples = w.samples();
    let dt = w.step();
    let h = dt / substeps as f64;
    for k in 0..samples.len() - 1 {
        let (w0, w1) = (samples[k], samples[k + 1]);
        let ctrl = |tau: f64| w0 + (w1 - w0) * tau / dt;
        for m in 0..substeps {
            let tau = m as f64 * h;
            let add = |x: &[f64; 2], k: &[f64; 2], c: f64| [x[0] + c * k[0], x[1] + c * k[1]];
            let k1 = trig_field(sys, &x, ctrl(tau));
            let k2 = trig_field(sys, &add(&x, &k1, h / 2.0), ctrl(tau + h / 2.0));
            let k3 = trig_field(sys, &add(&x, &k2, h / 2.0), ctrl(tau + h / 2.0));
            let k4 = trig_field(sys, &add(&x, &k3, h), ctrl(tau + h));
            for i in 0..2 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            visit(&x);
        }
    }
    x
}

pub fn rk4_endpoint(sys: &TrigSystem, x0: [f64; 2], w: &ControlSignal, substeps: usize) -> [f64; 2] {
    rk4_walk(sys, x0, w, substeps, |_| {})
}

pub fn random_certified(seed: u64) -> TrigSystem {
    generate_system(&mut ChaCha8Rng::seed_from_u64(seed), &ProtocolConfig::default()).unwrap().system
}

pub fn random_control(seed: u64, n: usize, t_final: f64) -> ControlSignal {
    generate_initial_control(&mut ChaCha8Rng::seed_from_u64(seed), n, t_final, Noise::Uniform).unwrap()
}

/// Spectral norm of a 2×2 matrix from its singular values, via the
/// closed form `σ_max² = (s + √(s² − 4 det²))/2` with `s = ‖M‖_F²`.
pub fn spectral2(m: &[[f64; 2]; 2]) -> f64 {
    let s: f64 = m.iter().flatten().map(|v| v * v).sum();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    ((s + (s * s - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}
