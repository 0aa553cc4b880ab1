//! Turns discrete, noisy samples into smoothed series, derivative estimates,
//! and a continuous-time input for the chain integrator.

use crate::signals::TimeSeries;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

/// Savitzky-Golay configuration. The window is specified as a physical time
/// span and realized as an odd sample count on the data grid.
#[derive(Debug, Clone, Copy)]
pub struct SmootherConfig {
    /// Target window span in time units.
    pub window_span: f64,
    /// Local polynomial degree, reduced automatically when the realized
    /// window is too short.
    pub poly_degree: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self { window_span: 30.0, poly_degree: 3 }
    }
}

/// Local least-squares polynomial value at the window center for the
/// sample indices `lo..=hi`, fitted around index `center`.
fn local_poly_value(y: &[f64], lo: usize, hi: usize, center: usize, degree: usize) -> f64 {
    let len = hi - lo + 1;
    let degree = degree.min(len - 1);
    // Offsets normalized to [-1, 1] for conditioning; the fitted value at the
    // center is invariant under this scaling.
    let half = ((hi - center).max(center - lo)).max(1) as f64;
    let a = DMatrix::from_fn(len, degree + 1, |r, c| {
        let s = ((lo + r) as f64 - center as f64) / half;
        s.powi(c as i32)
    });
    let yv = DVector::from_fn(len, |r, _| y[lo + r]);
    let gram = a.transpose() * &a;
    let rhs = a.transpose() * yv;
    let beta = gram
        .lu()
        .solve(&rhs)
        .unwrap_or_else(|| DVector::zeros(degree + 1));
    beta[0]
}

/// Realized odd window length: nearest odd integer to `window_span / dt`,
/// clamped to `[poly_degree + 1 made odd, n made odd]` and at least 3.
fn realized_window(span: f64, dt: f64, degree: usize, n: usize) -> usize {
    let target = span / dt;
    let rounded = target.round().max(1.0) as usize;
    let mut w = if rounded % 2 == 1 {
        rounded
    } else {
        // Even: pick the closer odd neighbor, ties toward the larger window.
        if target >= rounded as f64 { rounded + 1 } else { rounded - 1 }
    };
    let mut lower = degree + 1;
    if lower % 2 == 0 {
        lower += 1;
    }
    let lower = lower.max(3);
    let upper = if n % 2 == 1 { n } else { n - 1 };
    w = w.max(lower).min(upper);
    w.max(3).min(upper)
}

/// Savitzky-Golay smoothing on a uniform grid.
///
/// Interior points use the classic central-window convolution; within half a
/// window of either end the polynomial is refitted on the truncated one-sided
/// window, so no data is fabricated beyond the record.
pub fn savitzky_golay(ts: &TimeSeries, cfg: &SmootherConfig) -> Result<TimeSeries> {
    let n = ts.len();
    if n < 3 {
        return Err(Error::InvalidSmoother(format!("need at least 3 samples, got {n}")));
    }
    if cfg.window_span <= 0.0 {
        return Err(Error::InvalidSmoother("window_span must be positive".into()));
    }
    let dt = ts.uniform_dt().ok_or(Error::NonUniformGrid)?;
    let w = realized_window(cfg.window_span, dt, cfg.poly_degree, n);
    let degree = cfg.poly_degree.min(w - 1);
    let h = w / 2;

    // Interior convolution weights: value at the window center of the
    // least-squares polynomial fit, precomputed once for the shared geometry.
    let weights: Vec<f64> = {
        let a = DMatrix::from_fn(w, degree + 1, |r, c| {
            let s = (r as f64 - h as f64) / h.max(1) as f64;
            s.powi(c as i32)
        });
        let gram = (a.transpose() * &a)
            .lu()
            .solve(&DMatrix::identity(degree + 1, degree + 1))
            .expect("SG Gram matrix is SPD");
        let wrow = &a * gram.column(0);
        wrow.iter().copied().collect()
    };

    let mut values = Array2::zeros((n, ts.dim()));
    for j in 0..ts.dim() {
        let col: Vec<f64> = ts.component(j).to_vec();
        for i in 0..n {
            values[[i, j]] = if i >= h && i + h < n {
                weights
                    .iter()
                    .enumerate()
                    .map(|(k, &wk)| wk * col[i - h + k])
                    .sum()
            } else {
                let lo = i.saturating_sub(h);
                let hi = (i + h).min(n - 1);
                local_poly_value(&col, lo, hi, i, degree)
            };
        }
    }
    TimeSeries::new(ts.times.clone(), values, ts.component_names.clone())
}

/// Derivative estimate by finite differences: central at interior points,
/// one-sided at both ends. Works on non-uniform grids.
pub fn finite_difference_gradient(ts: &TimeSeries) -> Result<TimeSeries> {
    let n = ts.len();
    let d = ts.dim();
    let t = &ts.times;
    let mut values = Array2::zeros((n, d));
    for j in 0..d {
        let x = ts.component(j);
        if n == 2 {
            let slope = (x[1] - x[0]) / (t[1] - t[0]);
            values[[0, j]] = slope;
            values[[1, j]] = slope;
            continue;
        }
        values[[0, j]] = (x[1] - x[0]) / (t[1] - t[0]);
        values[[n - 1, j]] = (x[n - 1] - x[n - 2]) / (t[n - 1] - t[n - 2]);
        for i in 1..n - 1 {
            values[[i, j]] = (x[i + 1] - x[i - 1]) / (t[i + 1] - t[i - 1]);
        }
    }
    TimeSeries::new(t.clone(), values, ts.component_names.clone())
}

/// Shape-preserving piecewise-cubic Hermite interpolant (Fritsch-Carlson
/// slope limiting, per component). Evaluation outside the knot range clamps
/// to the boundary value.
#[derive(Debug, Clone)]
pub struct Interpolant {
    times: Vec<f64>,
    values: Array2<f64>,
    slopes: Array2<f64>,
}

/// Fritsch-Carlson slopes for one component.
fn pchip_slopes(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let h: Vec<f64> = (0..n - 1).map(|i| t[i + 1] - t[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for i in 1..n - 1 {
        let (dp, dn) = (delta[i - 1], delta[i]);
        if dp == 0.0 || dn == 0.0 || dp.signum() != dn.signum() {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / dp + w2 / dn);
        }
    }
    let endpoint = |h0: f64, h1: f64, del0: f64, del1: f64| -> f64 {
        let mut s = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
        if s.signum() != del0.signum() {
            s = 0.0;
        } else if del0.signum() != del1.signum() && s.abs() > 3.0 * del0.abs() {
            s = 3.0 * del0;
        }
        s
    };
    d[0] = endpoint(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = endpoint(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

impl Interpolant {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Knot range `[t_1, t_N]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Evaluates component `j`; queries outside the domain clamp to the
    /// boundary value.
    pub fn eval_component(&self, j: usize, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[[0, j]];
        }
        if t >= self.times[n - 1] {
            return self.values[[n - 1, j]];
        }
        let i = self.times.partition_point(|&k| k <= t) - 1;
        let i = i.min(n - 2);
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.values[[i, j]]
            + h10 * h * self.slopes[[i, j]]
            + h01 * self.values[[i + 1, j]]
            + h11 * h * self.slopes[[i + 1, j]]
    }

    pub fn eval_row(&self, t: f64) -> Vec<f64> {
        (0..self.dim()).map(|j| self.eval_component(j, t)).collect()
    }
}

/// Builds the shape-preserving interpolant of a series.
pub fn build_interpolant(ts: &TimeSeries) -> Interpolant {
    let n = ts.len();
    let d = ts.dim();
    let mut slopes = Array2::zeros((n, d));
    for j in 0..d {
        let col: Vec<f64> = ts.component(j).to_vec();
        for (i, s) in pchip_slopes(&ts.times, &col).into_iter().enumerate() {
            slopes[[i, j]] = s;
        }
    }
    Interpolant { times: ts.times.clone(), values: ts.values.clone(), slopes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{add_noise, NoiseSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series_from_fn(n: usize, dt: f64, f: impl Fn(f64) -> f64) -> TimeSeries {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let values = Array2::from_shape_fn((n, 1), |(i, _)| f(times[i]));
        TimeSeries::new(times, values, vec!["x".into()]).unwrap()
    }

    #[test]
    fn sg_reproduces_low_degree_polynomial() {
        let ts = series_from_fn(101, 0.1, |t| 2.0 + 3.0 * t - 0.7 * t * t);
        let out = savitzky_golay(&ts, &SmootherConfig { window_span: 1.5, poly_degree: 3 }).unwrap();
        for i in 10..91 {
            assert_abs_diff_eq!(out.values[[i, 0]], ts.values[[i, 0]], epsilon = 1e-10);
        }
    }

    #[test]
    fn sg_leaves_constant_unchanged() {
        let ts = series_from_fn(40, 0.5, |_| 4.25);
        let out = savitzky_golay(&ts, &SmootherConfig { window_span: 5.0, poly_degree: 2 }).unwrap();
        for i in 0..40 {
            assert_abs_diff_eq!(out.values[[i, 0]], 4.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn sg_reduces_noise_on_sine() {
        let clean = series_from_fn(201, 0.5, f64::sin);
        let noisy = add_noise(&clean, &NoiseSpec { level: 0.5, seed: 21 }).unwrap();
        let smoothed =
            savitzky_golay(&noisy, &SmootherConfig { window_span: 6.0, poly_degree: 3 }).unwrap();
        let rms = |a: &TimeSeries, b: &TimeSeries| -> f64 {
            let ss: f64 = (0..a.len())
                .map(|i| (a.values[[i, 0]] - b.values[[i, 0]]).powi(2))
                .sum();
            (ss / a.len() as f64).sqrt()
        };
        assert!(rms(&smoothed, &clean) < rms(&noisy, &clean));
    }

    #[test]
    fn sg_rejects_non_uniform_grid() {
        let times = vec![0.0, 1.0, 2.5, 3.0];
        let values = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let ts = TimeSeries::new(times, values, vec!["x".into()]).unwrap();
        let err = savitzky_golay(&ts, &SmootherConfig::default());
        assert!(matches!(err, Err(Error::NonUniformGrid)));
    }

    #[test]
    fn sg_degree_reduces_when_window_too_short() {
        // span/dt < poly_degree + 1 forces the minimum window and a reduced fit.
        let ts = series_from_fn(9, 1.0, |t| t * t);
        let out = savitzky_golay(&ts, &SmootherConfig { window_span: 1.0, poly_degree: 3 }).unwrap();
        assert_eq!(out.len(), 9);
        assert!(out.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sg_is_linear_in_the_data() {
        let cfg = SmootherConfig { window_span: 3.0, poly_degree: 2 };
        let x = series_from_fn(60, 0.25, |t| (1.3 * t).sin());
        let y = series_from_fn(60, 0.25, |t| 0.5 * t + (2.0 * t).cos());
        let combo = series_from_fn(60, 0.25, |t| 2.0 * (1.3 * t).sin() - 3.0 * (0.5 * t + (2.0 * t).cos()));
        let sx = savitzky_golay(&x, &cfg).unwrap();
        let sy = savitzky_golay(&y, &cfg).unwrap();
        let sc = savitzky_golay(&combo, &cfg).unwrap();
        for i in 0..60 {
            assert_abs_diff_eq!(
                sc.values[[i, 0]],
                2.0 * sx.values[[i, 0]] - 3.0 * sy.values[[i, 0]],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn gradient_exact_on_linear_data() {
        let ts = series_from_fn(20, 0.3, |t| 3.0 * t + 1.0);
        let g = finite_difference_gradient(&ts).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(g.values[[i, 0]], 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let ts = series_from_fn(15, 0.2, |_| 9.0);
        let g = finite_difference_gradient(&ts).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_two_samples_is_the_secant() {
        let ts = series_from_fn(2, 2.0, |t| 5.0 * t);
        let g = finite_difference_gradient(&ts).unwrap();
        assert_eq!(g.values[[0, 0]], 5.0);
        assert_eq!(g.values[[1, 0]], 5.0);
    }

    #[test]
    fn gradient_converges_second_order_on_sine() {
        let err_at = |dt: f64| -> f64 {
            let n = (10.0 / dt) as usize + 1;
            let ts = series_from_fn(n, dt, f64::sin);
            let g = finite_difference_gradient(&ts).unwrap();
            (1..n - 1)
                .map(|i| (g.values[[i, 0]] - ts.times[i].cos()).abs())
                .fold(0.0, f64::max)
        };
        let coarse = err_at(0.1);
        let fine = err_at(0.05);
        assert!(coarse / fine >= 3.5, "ratio {}", coarse / fine);
    }

    #[test]
    fn interpolant_matches_knots_exactly() {
        let ts = series_from_fn(25, 0.4, |t| (t * 0.9).sin() + 0.1 * t);
        let interp = build_interpolant(&ts);
        for (i, &t) in ts.times.iter().enumerate() {
            assert_eq!(interp.eval_component(0, t), ts.values[[i, 0]]);
        }
    }

    #[test]
    fn interpolant_preserves_flat_segment() {
        let times = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let values = Array2::from_shape_vec((5, 1), vec![0.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let ts = TimeSeries::new(times, values, vec!["x".into()]).unwrap();
        let interp = build_interpolant(&ts);
        let v = interp.eval_component(0, 1.5);
        assert!((v - 1.0).abs() <= 1e-12, "flat run broken: {v}");
    }

    #[test]
    fn interpolant_monotone_on_monotone_data() {
        let ts = series_from_fn(12, 1.0, |t| t * t + 0.5 * t);
        let interp = build_interpolant(&ts);
        let mut prev = interp.eval_component(0, 0.0);
        let mut t = 0.0;
        while t < 11.0 {
            t += 0.01;
            let v = interp.eval_component(0, t);
            assert!(v >= prev - 1e-12, "not monotone at t={t}");
            prev = v;
        }
    }

    #[test]
    fn interpolant_clamps_outside_domain() {
        let ts = series_from_fn(5, 1.0, |t| t);
        let interp = build_interpolant(&ts);
        assert_eq!(interp.eval_component(0, -3.0), 0.0);
        assert_eq!(interp.eval_component(0, 99.0), 4.0);
    }

    proptest! {
        // No overshoot: on every subinterval the interpolant stays within the
        // bounding knot values.
        #[test]
        fn interpolant_never_overshoots(ys in proptest::collection::vec(-5.0f64..5.0, 4..20)) {
            let n = ys.len();
            let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let values = Array2::from_shape_fn((n, 1), |(i, _)| ys[i]);
            let ts = TimeSeries::new(times, values, vec!["x".into()]).unwrap();
            let interp = build_interpolant(&ts);
            for i in 0..n - 1 {
                let lo = ys[i].min(ys[i + 1]) - 1e-9;
                let hi = ys[i].max(ys[i + 1]) + 1e-9;
                for k in 1..20 {
                    let t = i as f64 + k as f64 / 20.0;
                    let v = interp.eval_component(0, t);
                    prop_assert!(v >= lo && v <= hi, "overshoot at t={}: {} not in [{}, {}]", t, v, lo, hi);
                }
            }
        }
    }
}
