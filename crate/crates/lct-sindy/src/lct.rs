//! Erlang memory kernels and the linear chain trick.
//!
//! A gamma/Erlang-weighted history integral of a signal equals the terminal
//! state of a cascade of `p` first-order stages with common rate `a`:
//!
//! ```text
//! z_1' = a (u   - z_1)
//! z_j' = a (z_{j-1} - z_j),   j = 2..p
//! ```
//!
//! [`integrate_chain`] runs the cascade over a data grid with fixed-step RK4;
//! [`convolution_oracle`] evaluates the same quantity by adaptive quadrature
//! of the kernel-weighted history integral, providing an independent check.

use crate::preprocess::Interpolant;
use crate::{Error, Result};
use ndarray::Array2;

/// A continuous scalar signal driving a chain.
pub trait InputSignal {
    fn value(&self, t: f64) -> f64;
}

impl<F: Fn(f64) -> f64> InputSignal for F {
    fn value(&self, t: f64) -> f64 {
        self(t)
    }
}

/// One component of an interpolant viewed as a chain input.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    pub interp: &'a Interpolant,
    pub component: usize,
}

impl InputSignal for Channel<'_> {
    fn value(&self, t: f64) -> f64 {
        self.interp.eval_component(self.component, t)
    }
}

/// Normalized gamma kernel of integer order `p` and rate `a`:
/// `K(s) = a^p s^(p-1) e^(-a s) / (p-1)!`, mean `p/a`, variance `p/a^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErlangKernel {
    pub p: u32,
    pub a: f64,
}

/// ln((p-1)!) by direct log summation; exact enough for any chain order.
fn ln_factorial(n: u32) -> f64 {
    (1..=n as u64).map(|k| (k as f64).ln()).sum()
}

impl ErlangKernel {
    pub fn new(p: u32, a: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidKernel("order p must be >= 1".into()));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidKernel(format!("rate a = {a} must be positive")));
        }
        Ok(Self { p, a })
    }

    /// Kernel with mean delay `tau` and order `p` (`a = p / tau`).
    pub fn from_mean(p: u32, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidKernel(format!("mean delay {tau} must be positive")));
        }
        Self::new(p, p as f64 / tau)
    }

    /// Mean delay `p / a`.
    pub fn mean(&self) -> f64 {
        self.p as f64 / self.a
    }

    /// Variance `p / a^2`.
    pub fn variance(&self) -> f64 {
        self.p as f64 / (self.a * self.a)
    }

    /// Kernel density at lag `s >= 0` (panics on negative `s`).
    ///
    /// For p > 20 the value is assembled in log space; the factorial would
    /// otherwise lose precision and overflow near p = 171.
    pub fn density(&self, s: f64) -> f64 {
        assert!(s >= 0.0, "kernel density queried at negative lag {s}");
        let p = self.p;
        let a = self.a;
        if s == 0.0 {
            return if p == 1 { a } else { 0.0 };
        }
        if p <= 20 {
            let mut fact = 1.0;
            for k in 2..p as u64 {
                fact *= k as f64;
            }
            a.powi(p as i32) * s.powi(p as i32 - 1) * (-a * s).exp() / fact
        } else {
            let ln_k = p as f64 * a.ln() + (p as f64 - 1.0) * s.ln() - a * s - ln_factorial(p - 1);
            ln_k.exp()
        }
    }

    /// Upper tail mass `P(S > s)`, evaluated stably in log space.
    pub fn tail_mass(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        let x = self.a * s;
        // ln of sum_{k=0}^{p-1} x^k / k! via log-sum-exp.
        let mut ln_terms = Vec::with_capacity(self.p as usize);
        let mut ln_fact = 0.0;
        for k in 0..self.p as u64 {
            if k > 0 {
                ln_fact += (k as f64).ln();
            }
            ln_terms.push(k as f64 * x.ln() - ln_fact);
        }
        let m = ln_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + ln_terms.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        (lse - x).exp().min(1.0)
    }
}

/// Integrated auxiliary states `z_1..z_p` of a chain driven over a grid.
#[derive(Debug, Clone)]
pub struct ChainTrajectory {
    pub times: Vec<f64>,
    /// N x p matrix; column `j` holds stage `z_{j+1}`.
    pub states: Array2<f64>,
    pub kernel: ErlangKernel,
    pub initial_state: Vec<f64>,
}

impl ChainTrajectory {
    /// Terminal stage `z_p` at the grid times.
    pub fn last_state(&self) -> Vec<f64> {
        self.states.column(self.states.ncols() - 1).to_vec()
    }
}

fn chain_rhs(a: f64, u: f64, z: &[f64], out: &mut [f64]) {
    out[0] = a * (u - z[0]);
    for j in 1..z.len() {
        out[j] = a * (z[j - 1] - z[j]);
    }
}

/// Integrates the chain with classical RK4 over `times`, recording states at
/// the grid points. The internal step never exceeds `min(dt, 0.1/a)` so the
/// linear cascade stays far inside the stability region.
///
/// `init` defaults to `input(t_1)` replicated across all stages, the
/// consistent start for a constant pre-observation history.
pub fn integrate_chain<U: InputSignal + ?Sized>(
    kernel: &ErlangKernel,
    input: &U,
    times: &[f64],
    init: Option<&[f64]>,
) -> Result<ChainTrajectory> {
    let p = kernel.p as usize;
    let a = kernel.a;
    if times.is_empty() {
        return Err(Error::InvalidParams("empty time grid".into()));
    }
    let init: Vec<f64> = match init {
        Some(z0) => {
            if z0.len() != p {
                return Err(Error::InvalidParams(format!(
                    "chain init has {} entries for order {p}",
                    z0.len()
                )));
            }
            z0.to_vec()
        }
        None => vec![input.value(times[0]); p],
    };

    let mut states = Array2::zeros((times.len(), p));
    let mut z = init.clone();
    for (j, &v) in z.iter().enumerate() {
        states[[0, j]] = v;
    }
    let mut k1 = vec![0.0; p];
    let mut k2 = vec![0.0; p];
    let mut k3 = vec![0.0; p];
    let mut k4 = vec![0.0; p];
    let mut tmp = vec![0.0; p];

    for i in 1..times.len() {
        let dt = times[i] - times[i - 1];
        if !(dt > 0.0) {
            return Err(Error::InvalidParams("time grid not increasing".into()));
        }
        let n_sub = ((dt * a / 0.1).ceil() as usize).max(1);
        let h = dt / n_sub as f64;
        let mut t = times[i - 1];
        for _ in 0..n_sub {
            chain_rhs(a, input.value(t), &z, &mut k1);
            for j in 0..p {
                tmp[j] = z[j] + 0.5 * h * k1[j];
            }
            let u_mid = input.value(t + 0.5 * h);
            chain_rhs(a, u_mid, &tmp, &mut k2);
            for j in 0..p {
                tmp[j] = z[j] + 0.5 * h * k2[j];
            }
            chain_rhs(a, u_mid, &tmp, &mut k3);
            for j in 0..p {
                tmp[j] = z[j] + h * k3[j];
            }
            chain_rhs(a, input.value(t + h), &tmp, &mut k4);
            for j in 0..p {
                z[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            t += h;
        }
        for (j, &v) in z.iter().enumerate() {
            states[[i, j]] = v;
        }
    }
    Ok(ChainTrajectory { times: times.to_vec(), states, kernel: *kernel, initial_state: init })
}

/// Adaptive Simpson quadrature on one panel.
fn simpson_recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + simpson_recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson integral of `f` over `[a, b]` with absolute tolerance
/// `tol`, seeded with interior breakpoints so narrow integrand features are
/// not skipped over.
pub fn adaptive_quadrature(f: &dyn Fn(f64) -> f64, a: f64, b: f64, breakpoints: &[f64], tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut knots: Vec<f64> = vec![a, b];
    knots.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let total = b - a;
    let mut sum = 0.0;
    for w in knots.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let panel_tol = tol * ((hi - lo) / total).max(1e-3);
        let m = 0.5 * (lo + hi);
        let (flo, fhi, fm) = (f(lo), f(hi), f(m));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi);
        sum += simpson_recurse(f, lo, flo, hi, fhi, m, fm, whole, panel_tol, 48);
    }
    sum
}

/// History integral `int_0^(t - history_start) K(s) u(t - s) ds` by adaptive
/// quadrature (absolute tolerance 1e-9).
///
/// The upper limit is truncated at the start of the available history, so for
/// a constant input `c` the value is `c * (1 - tail mass)`, approaching `c`
/// as `t` grows; this matches a chain run on the same record when the chain
/// starts from zero history weight beyond `history_start`.
pub fn convolution_oracle<U: InputSignal + ?Sized>(
    kernel: &ErlangKernel,
    input: &U,
    t: f64,
    history_start: f64,
) -> Result<f64> {
    if t < history_start {
        return Err(Error::InvalidParams(format!(
            "query time {t} precedes history start {history_start}"
        )));
    }
    let upper = t - history_start;
    if upper == 0.0 {
        return Ok(0.0);
    }
    let mean = kernel.mean();
    let sd = kernel.variance().sqrt();
    let mut seeds = Vec::new();
    for k in -6..=6 {
        seeds.push(mean + k as f64 * sd);
    }
    // Resolve the decay region of low-order kernels near s = 0.
    let mut frac = upper;
    for _ in 0..6 {
        frac *= 0.5;
        seeds.push(frac);
    }
    let integrand = move |s: f64| kernel.density(s) * input.value(t - s);
    Ok(adaptive_quadrature(&integrand, 0.0, upper, &seeds, 1e-9))
}
