//! Sampled multivariate trajectories: the data currency of the whole pipeline.
//!
//! Provides seeded Gaussian noise injection, contiguous train/validation
//! splitting, and CSV round-tripping at full double precision.

use crate::{Error, Result};
use ndarray::{Array2, ArrayView1, s};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use std::path::Path;

/// A uniformly or non-uniformly sampled multivariate trajectory.
///
/// Row `i` of `values` is the state at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Array2<f64>,
    pub component_names: Vec<String>,
}

impl TimeSeries {
    /// Builds a series, enforcing strictly increasing times, `N >= 2`,
    /// matching shapes, and finite values.
    pub fn new(times: Vec<f64>, values: Array2<f64>, component_names: Vec<String>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidSeries(format!(
                "need at least 2 samples, got {}",
                times.len()
            )));
        }
        if values.nrows() != times.len() {
            return Err(Error::InvalidSeries(format!(
                "{} rows of values for {} times",
                values.nrows(),
                times.len()
            )));
        }
        if values.ncols() == 0 || values.ncols() != component_names.len() {
            return Err(Error::InvalidSeries(format!(
                "{} columns for {} component names",
                values.ncols(),
                component_names.len()
            )));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidSeries(format!(
                    "times not strictly increasing at t={}",
                    w[0]
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSeries("non-finite entry".into()));
        }
        Ok(Self { times, values, component_names })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of state components.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn component(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    /// Sub-series over sample indices `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        TimeSeries::new(
            self.times[start..end].to_vec(),
            self.values.slice(s![start..end, ..]).to_owned(),
            self.component_names.clone(),
        )
    }

    /// Mean sampling interval.
    pub fn mean_dt(&self) -> f64 {
        (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64
    }

    /// The common step when the grid is uniform to relative tolerance 1e-9.
    pub fn uniform_dt(&self) -> Option<f64> {
        let dt = self.mean_dt();
        let tol = 1e-9 * dt.abs().max(self.times.last().unwrap().abs());
        for w in self.times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > tol {
                return None;
            }
        }
        Some(dt)
    }

    /// Sample standard deviation of component `j` (n-1 denominator).
    pub fn component_std(&self, j: usize) -> f64 {
        let col = self.values.column(j);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    }
}

/// Additive Gaussian noise scaled per component by the clean signal's
/// sample standard deviation.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    /// Dimensionless intensity; the per-component noise std is `level * sigma_j`.
    pub level: f64,
    pub seed: u64,
}

/// Adds seeded Gaussian noise: `out_j = in_j + eps`, `eps ~ N(0, (level*sigma_j)^2)`.
///
/// The generator is ChaCha8 seeded from `spec.seed`; samples are drawn
/// component-major so the result is identical across platforms and runs.
/// A constant component (`sigma_j = 0`) receives zero noise.
pub fn add_noise(ts: &TimeSeries, spec: &NoiseSpec) -> Result<TimeSeries> {
    if spec.level < 0.0 {
        return Err(Error::InvalidParams(format!("noise level {} < 0", spec.level)));
    }
    if spec.level == 0.0 {
        return Ok(ts.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = ts.values.clone();
    for j in 0..ts.dim() {
        let sigma = ts.component_std(j);
        let amp = spec.level * sigma;
        if amp == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, amp).expect("finite std");
        for i in 0..ts.len() {
            values[[i, j]] += normal.sample(&mut rng);
        }
    }
    TimeSeries::new(ts.times.clone(), values, ts.component_names.clone())
}

/// Contiguous train/validation split at a fraction of the time span.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    /// Training share of the span, in (0, 1). The boundary is resolved to the
    /// nearest sample time; that sample belongs to training.
    pub fraction: f64,
}

/// Splits into `(training, validation)`. Concatenating the parts reproduces
/// the input exactly; each part keeps at least 2 samples.
pub fn split(ts: &TimeSeries, spec: &SplitSpec) -> Result<(TimeSeries, TimeSeries)> {
    if !(spec.fraction > 0.0 && spec.fraction < 1.0) {
        return Err(Error::SplitTooExtreme(format!(
            "fraction {} outside (0, 1)",
            spec.fraction
        )));
    }
    let n = ts.len();
    let t0 = ts.times[0];
    let t_split = t0 + spec.fraction * (ts.times[n - 1] - t0);
    // Nearest sample to the boundary time; ties go to the earlier sample.
    let mut boundary = 0usize;
    let mut best = f64::INFINITY;
    for (i, &t) in ts.times.iter().enumerate() {
        let d = (t - t_split).abs();
        if d < best {
            best = d;
            boundary = i;
        }
    }
    let n_train = boundary + 1;
    let n_val = n - n_train;
    if n_train < 2 || n_val < 2 {
        return Err(Error::SplitTooExtreme(format!(
            "fraction {} leaves segments of {} and {} samples",
            spec.fraction, n_train, n_val
        )));
    }
    Ok((ts.slice_rows(0, n_train)?, ts.slice_rows(n_train, n)?))
}

/// Formats a float in scientific notation with 17 significant digits,
/// enough to round-trip any f64 exactly.
pub fn format_full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `t,<name1>,...,<named>` CSV with full-precision numbers.
pub fn write_csv(ts: &TimeSeries, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push('t');
    for name in &ts.component_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..ts.len() {
        let _ = write!(out, "{}", format_full(ts.times[i]));
        for j in 0..ts.dim() {
            let _ = write!(out, ",{}", format_full(ts.values[[i, j]]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a CSV produced by [`write_csv`] (or any numeric CSV with a `t`-first
/// header). Parse failures report the offending line number.
pub fn read_csv(path: &Path) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Csv { line: 0, msg: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("t") {
        return Err(Error::Csv { line: 1, msg: "header must start with column `t`".into() });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Csv { line: 1, msg: "no state columns in header".into() });
    }
    let d = names.len();
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv { line: 0, msg: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 1 {
            return Err(Error::Csv {
                line,
                msg: format!("expected {} columns, found {}", d + 1, record.len()),
            });
        }
        let parse = |s: &str| -> std::result::Result<f64, Error> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Csv { line, msg: format!("non-numeric cell `{s}`") })
        };
        let t = parse(record.get(0).unwrap())?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Csv {
                    line,
                    msg: format!("time {t} not greater than previous {prev}"),
                });
            }
        }
        times.push(t);
        for j in 1..=d {
            flat.push(parse(record.get(j).unwrap())?);
        }
    }
    let n = times.len();
    let values = Array2::from_shape_vec((n, d), flat)
        .map_err(|e| Error::Csv { line: 0, msg: e.to_string() })?;
    TimeSeries::new(times, values, names)
}
