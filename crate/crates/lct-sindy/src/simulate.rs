//! Ground-truth generators for the benchmark systems.
//!
//! The distributed-delay systems (Hes1-mRNA and delayed logistic growth) are
//! integrated through their exact chain-augmented ODE form; the Ikeda system
//! has a genuinely discrete delay and is integrated by the method of steps.

use crate::lct::ErlangKernel;
use crate::signals::TimeSeries;
use crate::{Error, Result};
use ndarray::{s, Array2};

/// Fixed-step RK4 over `times` with `n_sub` internal substeps per interval.
fn rk4_path(
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    y0: &[f64],
    times: &[f64],
    n_sub: usize,
) -> Array2<f64> {
    let dim = y0.len();
    let mut out = Array2::zeros((times.len(), dim));
    let mut y = y0.to_vec();
    for (j, &v) in y.iter().enumerate() {
        out[[0, j]] = v;
    }
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for i in 1..times.len() {
        let h = (times[i] - times[i - 1]) / n_sub as f64;
        let mut t = times[i - 1];
        for _ in 0..n_sub {
            rhs(t, &y, &mut k1);
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k1[j];
            }
            rhs(t + 0.5 * h, &tmp, &mut k2);
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k2[j];
            }
            rhs(t + 0.5 * h, &tmp, &mut k3);
            for j in 0..dim {
                tmp[j] = y[j] + h * k3[j];
            }
            rhs(t + h, &tmp, &mut k4);
            for j in 0..dim {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            t += h;
        }
        for (j, &v) in y.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

fn grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t_end > dt) {
        return Err(Error::InvalidParams(format!(
            "need 0 < dt < t_end, got dt={dt}, t_end={t_end}"
        )));
    }
    let n = (t_end / dt).round() as usize;
    Ok((0..=n).map(|i| i as f64 * dt).collect())
}

fn substeps_for(dt: f64, a: f64) -> usize {
    ((dt * a / 0.1).ceil() as usize).max(1)
}

/// Hes1-mRNA negative feedback with gamma-distributed transcriptional delay:
///
/// ```text
/// M' = alpha_m / (1 + (z_p / p0)^n) - mu_m M
/// P' = alpha_p M - mu_p P
/// ```
///
/// where `z_p` is the kernel-weighted history of the protein `P`.
#[derive(Debug, Clone, Copy)]
pub struct Hes1Params {
    /// mRNA production rate.
    pub alpha_m: f64,
    /// mRNA degradation rate.
    pub mu_m: f64,
    /// Protein production rate.
    pub alpha_p: f64,
    /// Protein degradation rate.
    pub mu_p: f64,
    /// Hill repression threshold.
    pub p0: f64,
    /// Hill exponent.
    pub n: f64,
    /// Delay kernel for the repressive feedback.
    pub kernel: ErlangKernel,
}

impl Hes1Params {
    /// Baseline literature values with a broad kernel (mean delay 20, order 2).
    pub fn baseline() -> Self {
        Self {
            alpha_m: 1.0,
            mu_m: 0.03,
            alpha_p: 2.0,
            mu_p: 0.03,
            p0: 100.0,
            n: 5.0,
            kernel: ErlangKernel::from_mean(2, 20.0).unwrap(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_m", self.alpha_m),
            ("mu_m", self.mu_m),
            ("alpha_p", self.alpha_p),
            ("mu_p", self.mu_p),
            ("p0", self.p0),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.n >= 1.0) {
            return Err(Error::InvalidParams(format!("hill exponent {} < 1", self.n)));
        }
        Ok(())
    }
}

/// Hill repression `1 / (1 + (v / p0)^n)`.
pub fn hill(v: f64, p0: f64, n: f64) -> f64 {
    1.0 / (1.0 + (v / p0).abs().powf(n))
}

/// Integrates the chain-augmented Hes1 system from a constant history
/// `(m0, p_init)`, returning the observables and the chain states.
pub fn simulate_hes1_full(
    params: &Hes1Params,
    history: (f64, f64),
    t_end: f64,
    dt: f64,
) -> Result<(TimeSeries, Array2<f64>)> {
    params.validate()?;
    let times = grid(t_end, dt)?;
    let p = params.kernel.p as usize;
    let a = params.kernel.a;
    let (m0, p_init) = history;
    let mut y0 = vec![m0, p_init];
    y0.extend(std::iter::repeat(p_init).take(p));
    let pr = *params;
    let rhs = move |_t: f64, y: &[f64], out: &mut [f64]| {
        let m = y[0];
        let prot = y[1];
        let zp = y[1 + p];
        out[0] = pr.alpha_m * hill(zp, pr.p0, pr.n) - pr.mu_m * m;
        out[1] = pr.alpha_p * m - pr.mu_p * prot;
        out[2] = a * (prot - y[2]);
        for j in 3..2 + p {
            out[j] = a * (y[j - 1] - y[j]);
        }
    };
    let path = rk4_path(&rhs, &y0, &times, substeps_for(dt, a));
    let obs = path.slice(s![.., 0..2]).to_owned();
    let chain = path.slice(s![.., 2..]).to_owned();
    let ts = TimeSeries::new(times, obs, vec!["M".into(), "P".into()])?;
    Ok((ts, chain))
}

/// As [`simulate_hes1_full`] but returning only the observed `(M, P)` columns.
pub fn simulate_hes1(
    params: &Hes1Params,
    history: (f64, f64),
    t_end: f64,
    dt: f64,
) -> Result<TimeSeries> {
    Ok(simulate_hes1_full(params, history, t_end, dt)?.0)
}

/// Logistic growth with distributed-delay crowding:
/// `x' = r x (1 - z_p / capacity)` with the chain driven by `x`.
#[derive(Debug, Clone, Copy)]
pub struct LogisticParams {
    pub r: f64,
    pub capacity: f64,
    pub kernel: ErlangKernel,
}

impl LogisticParams {
    fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.capacity > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need r > 0 and capacity > 0, got r={}, capacity={}",
                self.r, self.capacity
            )));
        }
        Ok(())
    }
}

/// Integrates the chain-augmented delayed logistic equation from the constant
/// history `x0`, returning the scalar series and the chain states.
pub fn simulate_logistic_full(
    params: &LogisticParams,
    x0: f64,
    t_end: f64,
    dt: f64,
) -> Result<(TimeSeries, Array2<f64>)> {
    params.validate()?;
    if !(x0 > 0.0) {
        return Err(Error::InvalidParams(format!("history x0 = {x0} must be positive")));
    }
    let times = grid(t_end, dt)?;
    let p = params.kernel.p as usize;
    let a = params.kernel.a;
    let mut y0 = vec![x0];
    y0.extend(std::iter::repeat(x0).take(p));
    let pr = *params;
    let rhs = move |_t: f64, y: &[f64], out: &mut [f64]| {
        let x = y[0];
        let zp = y[p];
        out[0] = pr.r * x * (1.0 - zp / pr.capacity);
        out[1] = a * (x - y[1]);
        for j in 2..1 + p {
            out[j] = a * (y[j - 1] - y[j]);
        }
    };
    let path = rk4_path(&rhs, &y0, &times, substeps_for(dt, a));
    let obs = path.slice(s![.., 0..1]).to_owned();
    let chain = path.slice(s![.., 1..]).to_owned();
    let ts = TimeSeries::new(times, obs, vec!["x".into()])?;
    Ok((ts, chain))
}

/// As [`simulate_logistic_full`] but returning only the observed series.
pub fn simulate_logistic(params: &LogisticParams, x0: f64, t_end: f64, dt: f64) -> Result<TimeSeries> {
    Ok(simulate_logistic_full(params, x0, t_end, dt)?.0)
}

/// Ikeda delayed feedback `x' = -x + alpha sin(x(t - tau))`: a scalar system
/// with a genuinely discrete delay and chaotic regimes.
#[derive(Debug, Clone, Copy)]
pub struct IkedaParams {
    pub alpha: f64,
    pub tau: f64,
}

/// Cubic Hermite read of the already-computed trajectory at `t_query`.
/// Times before the record start return the constant history value.
fn hermite_lookup(times: &[f64], xs: &[f64], dxs: &[f64], history: f64, t_query: f64) -> f64 {
    if t_query <= times[0] {
        return history;
    }
    let n = xs.len();
    let i = times[..n].partition_point(|&k| k <= t_query) - 1;
    if i + 1 >= n {
        return xs[n - 1];
    }
    let h = times[i + 1] - times[i];
    let s = (t_query - times[i]) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    h00 * xs[i] + h10 * h * dxs[i] + h01 * xs[i + 1] + h11 * h * dxs[i + 1]
}

/// Integrates the Ikeda system by the method of steps: RK4 where the lagged
/// state is interpolated from the trajectory computed so far, with a constant
/// history on `[-tau, 0]`. Requires `dt <= tau` so every lagged query lands in
/// already-computed territory.
pub fn simulate_ikeda(params: &IkedaParams, history: f64, t_end: f64, dt: f64) -> Result<TimeSeries> {
    if !(params.alpha > 0.0) || !(params.tau > 0.0) {
        return Err(Error::InvalidParams(format!(
            "need alpha > 0 and tau > 0, got alpha={}, tau={}",
            params.alpha, params.tau
        )));
    }
    if dt > params.tau {
        return Err(Error::InvalidParams(format!(
            "dt = {dt} exceeds the delay tau = {}; the lag would precede resolved history",
            params.tau
        )));
    }
    let times = grid(t_end, dt)?;
    let n = times.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    let mut dxs: Vec<f64> = Vec::with_capacity(n);
    xs.push(history);

    let dx0 = -history
        + params.alpha * hermite_lookup(&times, &xs, &dxs, history, -params.tau).sin();
    dxs.push(dx0);

    for i in 1..n {
        let t = times[i - 1];
        let x = xs[i - 1];
        let f = |xs: &[f64], dxs: &[f64], tq: f64, xq: f64| -> f64 {
            -xq + params.alpha * hermite_lookup(&times, xs, dxs, history, tq - params.tau).sin()
        };
        let k1 = f(&xs, &dxs, t, x);
        let k2 = f(&xs, &dxs, t + 0.5 * dt, x + 0.5 * dt * k1);
        let k3 = f(&xs, &dxs, t + 0.5 * dt, x + 0.5 * dt * k2);
        let k4 = f(&xs, &dxs, t + dt, x + dt * k3);
        let x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        xs.push(x_next);
        let dx_next = f(&xs, &dxs, times[i], x_next);
        dxs.push(dx_next);
    }

    let values = Array2::from_shape_fn((n, 1), |(i, _)| xs[i]);
    TimeSeries::new(times, values, vec!["x".into()])
}
