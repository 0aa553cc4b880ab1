//! The outer identification loop: sweep a grid of candidate delay kernels,
//! fit a sparse model per candidate, score it against held-out data, and
//! return the winner together with the full leaderboard.
//!
//! Two delayed-feature constructions share the loop: the chain-based method
//! reconstructs a distributed-delay state per candidate `(tau, p)`, while the
//! discrete baseline uses an interpolated lagged signal per candidate `tau`.

use crate::features::{
    build_library, normalize_columns, FeatureExpr, HillFeature, LibrarySpec, Signal,
};
use crate::lct::{integrate_chain, Channel, ChainTrajectory, ErlangKernel};
use crate::preprocess::{
    build_interpolant, finite_difference_gradient, savitzky_golay, Interpolant, SmootherConfig,
};
use crate::regression::{stridge, SparseModel, STRidgeConfig};
use crate::signals::{split, SplitSpec, TimeSeries};
use crate::simulate::Hes1Params;
use crate::{Error, Result};
use ndarray::Array2;
use rayon::prelude::*;

/// Delayed-feature construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Chain-reconstructed distributed-delay state, searched over `(tau, p)`.
    Lct,
    /// Interpolated discrete lag `x(t - tau)`, searched over `tau` only.
    Discrete,
}

/// Candidate ranking criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Simulate the identified model forward and rank by BIC on the
    /// validation segment.
    Bic,
    /// Rank by the relative derivative residual on the validation segment;
    /// used for chaotic systems where trajectory error is uninformative.
    DerivError,
}

/// Grid of candidate delay kernels and optional Hill nonlinearity parameters.
/// The sweep order is fixed: `tau` outermost, then `p`, then `p0`, then `n`.
#[derive(Debug, Clone, Default)]
pub struct CandidateGrid {
    pub taus: Vec<f64>,
    pub ps: Vec<u32>,
    pub hill_p0s: Vec<f64>,
    pub hill_ns: Vec<f64>,
}

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub tau: f64,
    /// Chain order; `None` for the discrete baseline.
    pub p: Option<u32>,
    /// Hill `(p0, n)` override; `None` keeps the library default.
    pub hill: Option<(f64, f64)>,
    /// Position in the sweep order, the final tie-breaker.
    pub index: usize,
}

impl CandidateGrid {
    fn candidates(&self, method: Method) -> Result<Vec<Candidate>> {
        if self.taus.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.taus.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidParams("candidate delays must be positive".into()));
        }
        let ps: Vec<Option<u32>> = match method {
            Method::Lct => {
                if self.ps.is_empty() {
                    return Err(Error::EmptyGrid);
                }
                if self.ps.contains(&0) {
                    return Err(Error::InvalidParams("chain orders must be >= 1".into()));
                }
                self.ps.iter().map(|&p| Some(p)).collect()
            }
            Method::Discrete => vec![None],
        };
        let hills: Vec<Option<(f64, f64)>> = if self.hill_p0s.is_empty() && self.hill_ns.is_empty()
        {
            vec![None]
        } else if self.hill_p0s.is_empty() || self.hill_ns.is_empty() {
            return Err(Error::InvalidParams(
                "hill_p0s and hill_ns must both be given when either is".into(),
            ));
        } else {
            let mut out = Vec::new();
            for &p0 in &self.hill_p0s {
                for &n in &self.hill_ns {
                    out.push(Some((p0, n)));
                }
            }
            out
        };
        let mut cands = Vec::new();
        let mut index = 0;
        for &tau in &self.taus {
            for &p in &ps {
                for &hill in &hills {
                    cands.push(Candidate { tau, p, hill, index });
                    index += 1;
                }
            }
        }
        Ok(cands)
    }
}

/// Library layout in terms of the method's delayed channel.
#[derive(Debug, Clone, Copy)]
pub struct LibraryConfig {
    pub poly_degree: u32,
    pub include_constant: bool,
    /// Admit the delayed channel into the polynomial block (cross terms).
    pub delayed_in_polynomials: bool,
    /// Default Hill `(p0, n)` applied to the delayed channel.
    pub hill_on_delayed: Option<(f64, f64)>,
    pub sin_on_delayed: bool,
    /// Append the bare delayed channel as a linear feature.
    pub linear_delayed: bool,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            poly_degree: 2,
            include_constant: true,
            delayed_in_polynomials: false,
            hill_on_delayed: None,
            sin_on_delayed: false,
            linear_delayed: false,
        }
    }
}

/// Everything the sweep needs besides the data and the grid.
#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub smoother: SmootherConfig,
    pub split: SplitSpec,
    pub stridge: STRidgeConfig,
    pub library: LibraryConfig,
    /// Component whose history feeds the delayed channel.
    pub chain_driver: usize,
    /// Chain-length penalty weight in the BIC.
    pub alpha: f64,
    /// Exclude the first `burn_in_taus * tau` time units from the regression
    /// rows (the chain state is initialization-biased there). Default 0.
    pub burn_in_taus: f64,
    pub criterion: Criterion,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            smoother: SmootherConfig::default(),
            split: SplitSpec { fraction: 0.5 },
            stridge: STRidgeConfig::default(),
            library: LibraryConfig::default(),
            chain_driver: 0,
            alpha: 1.0,
            burn_in_taus: 0.0,
            criterion: Criterion::Bic,
        }
    }
}

/// Fit quality of one candidate.
#[derive(Debug, Clone)]
pub struct FitScore {
    /// Sum of squared residuals on the scoring grid.
    pub rss: f64,
    /// `rss / (N_val * d)`.
    pub mse: f64,
    /// Per-component relative l2 error on the scoring grid.
    pub rel_error: Vec<f64>,
    pub bic: f64,
    /// Active-term count.
    pub k: usize,
    /// Relative validation derivative residual (derivative criterion only).
    pub deriv_error: Option<f64>,
    pub blew_up: bool,
}

/// `N ln(MSE) + k ln N + alpha * total_chain_length`.
pub fn bic_score(n: usize, mse: f64, k: usize, alpha: f64, total_chain_len: u32) -> f64 {
    if !mse.is_finite() {
        return f64::INFINITY;
    }
    n as f64 * mse.ln() + k as f64 * (n as f64).ln() + alpha * f64::from(total_chain_len)
}

/// One leaderboard row.
#[derive(Debug, Clone)]
pub struct LeaderboardEntry {
    pub tau: f64,
    pub p: Option<u32>,
    pub hill: Option<(f64, f64)>,
    pub bic: f64,
    pub mse: f64,
    pub k: usize,
    pub deriv_error: Option<f64>,
    pub index: usize,
}

/// The sweep winner with its sparse model and the ranked leaderboard.
#[derive(Debug, Clone)]
pub struct IdentifiedModel {
    pub model: SparseModel,
    pub tau_star: f64,
    pub p_star: Option<u32>,
    pub hill_star: Option<(f64, f64)>,
    pub score: FitScore,
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Forward simulation of an identified model.
#[derive(Debug, Clone)]
pub struct SimulatedModel {
    pub series: TimeSeries,
    /// The state exceeded 1e12 (or went non-finite); the trajectory is
    /// frozen at the last finite state from that point on.
    pub blew_up: bool,
}

const BLOW_UP_LIMIT: f64 = 1e12;

/// Self-contained forward integration of `x' = Theta(x, z) Xi`.
///
/// Chain stages are fed by the model's own state (not the data); lagged
/// features are read from the model's own computed past by cubic Hermite
/// interpolation with the initial state as constant pre-history. Chain
/// initial states replicate the driving component of `init`.
pub fn simulate_identified(
    model: &SparseModel,
    chains: &[(ErlangKernel, usize)],
    init: &[f64],
    times: &[f64],
) -> Result<SimulatedModel> {
    let d = model.coefficients.ncols();
    if init.len() != d {
        return Err(Error::InvalidParams(format!(
            "initial state has {} entries for {d} components",
            init.len()
        )));
    }
    if times.len() < 2 {
        return Err(Error::InvalidParams("need at least 2 output times".into()));
    }
    let mut chain_offsets = Vec::with_capacity(chains.len());
    let mut dim = d;
    for (kernel, driver) in chains {
        if *driver >= d {
            return Err(Error::InvalidParams(format!("chain driver {driver} out of range")));
        }
        chain_offsets.push(dim);
        dim += kernel.p as usize;
    }
    let mut min_lag = f64::INFINITY;
    let mut max_chain_ref = None;
    for expr in &model.feature_exprs {
        visit_signals(expr, &mut |sig| match sig {
            Signal::Lag { tau, .. } => min_lag = min_lag.min(tau),
            Signal::Chain(k) => max_chain_ref = Some(max_chain_ref.unwrap_or(0).max(k)),
            Signal::Component(_) => {}
        });
    }
    if let Some(k) = max_chain_ref {
        if k >= chains.len() {
            return Err(Error::InvalidParams(format!(
                "model references chain {k} but only {} supplied",
                chains.len()
            )));
        }
    }
    let has_lags = min_lag.is_finite();
    let max_dt = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if has_lags && max_dt > min_lag {
        return Err(Error::InvalidParams(format!(
            "grid step {max_dt} exceeds the smallest lag {min_lag}"
        )));
    }
    let a_max = chains.iter().map(|(k, _)| k.a).fold(0.0, f64::max);

    let mut y = vec![0.0; dim];
    y[..d].copy_from_slice(init);
    for ((kernel, driver), &off) in chains.iter().zip(&chain_offsets) {
        for j in 0..kernel.p as usize {
            y[off + j] = init[*driver];
        }
    }
    // Past (t, x, x') nodes for lagged lookups, recorded at substep ends.
    let mut hist_t: Vec<f64> = Vec::new();
    let mut hist_x: Vec<Vec<f64>> = Vec::new();
    let mut hist_dx: Vec<Vec<f64>> = Vec::new();

    struct Ctx<'m> {
        model: &'m SparseModel,
        chains: &'m [(ErlangKernel, usize)],
        chain_offsets: Vec<usize>,
        init: Vec<f64>,
        d: usize,
    }
    let ctx = Ctx { model, chains, chain_offsets, init: init.to_vec(), d };

    fn lag_value(
        ctx: &Ctx,
        hist_t: &[f64],
        hist_x: &[Vec<f64>],
        hist_dx: &[Vec<f64>],
        c: usize,
        tq: f64,
    ) -> f64 {
        if hist_t.is_empty() || tq <= hist_t[0] {
            return ctx.init[c];
        }
        let n = hist_t.len();
        let i = hist_t.partition_point(|&k| k <= tq) - 1;
        if i + 1 >= n {
            return hist_x[n - 1][c];
        }
        let h = hist_t[i + 1] - hist_t[i];
        let s = (tq - hist_t[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * hist_x[i][c]
            + h10 * h * hist_dx[i][c]
            + h01 * hist_x[i + 1][c]
            + h11 * h * hist_dx[i + 1][c]
    }

    fn eval_signal(
        ctx: &Ctx,
        sig: &Signal,
        t: f64,
        y: &[f64],
        ht: &[f64],
        hx: &[Vec<f64>],
        hdx: &[Vec<f64>],
    ) -> f64 {
        match sig {
            Signal::Component(c) => y[*c],
            Signal::Chain(k) => y[ctx.chain_offsets[*k] + ctx.chains[*k].0.p as usize - 1],
            Signal::Lag { component, tau } => lag_value(ctx, ht, hx, hdx, *component, t - tau),
        }
    }

    fn rhs(
        ctx: &Ctx,
        t: f64,
        y: &[f64],
        out: &mut [f64],
        ht: &[f64],
        hx: &[Vec<f64>],
        hdx: &[Vec<f64>],
    ) {
        for o in out.iter_mut() {
            *o = 0.0;
        }
        let d = ctx.d;
        for (fi, expr) in ctx.model.feature_exprs.iter().enumerate() {
            if (0..d).all(|j| !ctx.model.active[[fi, j]]) {
                continue;
            }
            let v = match expr {
                FeatureExpr::Constant => 1.0,
                FeatureExpr::Monomial(factors) => {
                    let mut m = 1.0;
                    for (sig, pow) in factors {
                        m *= eval_signal(ctx, sig, t, y, ht, hx, hdx).powi(*pow as i32);
                    }
                    m
                }
                FeatureExpr::Hill { arg, p0, n } => {
                    crate::simulate::hill(eval_signal(ctx, arg, t, y, ht, hx, hdx), *p0, *n)
                }
                FeatureExpr::Sin(sig) => eval_signal(ctx, sig, t, y, ht, hx, hdx).sin(),
            };
            for j in 0..d {
                if ctx.model.active[[fi, j]] {
                    out[j] += ctx.model.coefficients[[fi, j]] * v;
                }
            }
        }
        for ((kernel, driver), &off) in ctx.chains.iter().zip(&ctx.chain_offsets) {
            let a = kernel.a;
            let p = kernel.p as usize;
            out[off] = a * (y[*driver] - y[off]);
            for j in 1..p {
                out[off + j] = a * (y[off + j - 1] - y[off + j]);
            }
        }
    }

    let mut values = Array2::zeros((times.len(), d));
    for j in 0..d {
        values[[0, j]] = y[j];
    }
    let mut blew_up = false;
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    if has_lags {
        rhs(&ctx, times[0], &y, &mut k1, &hist_t, &hist_x, &hist_dx);
        hist_t.push(times[0]);
        hist_x.push(y[..d].to_vec());
        hist_dx.push(k1[..d].to_vec());
    }

    'outer: for i in 1..times.len() {
        let dt = times[i] - times[i - 1];
        let n_sub = if a_max > 0.0 { ((dt * a_max / 0.1).ceil() as usize).max(1) } else { 1 };
        let h = dt / n_sub as f64;
        let mut t = times[i - 1];
        for _ in 0..n_sub {
            rhs(&ctx, t, &y, &mut k1, &hist_t, &hist_x, &hist_dx);
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k1[j];
            }
            rhs(&ctx, t + 0.5 * h, &tmp, &mut k2, &hist_t, &hist_x, &hist_dx);
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k2[j];
            }
            rhs(&ctx, t + 0.5 * h, &tmp, &mut k3, &hist_t, &hist_x, &hist_dx);
            for j in 0..dim {
                tmp[j] = y[j] + h * k3[j];
            }
            rhs(&ctx, t + h, &tmp, &mut k4, &hist_t, &hist_x, &hist_dx);
            for j in 0..dim {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            t += h;
            if y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT) {
                blew_up = true;
                for r in i..times.len() {
                    for j in 0..d {
                        values[[r, j]] = values[[i - 1, j]];
                    }
                }
                break 'outer;
            }
            if has_lags {
                rhs(&ctx, t, &y, &mut k1, &hist_t, &hist_x, &hist_dx);
                hist_t.push(t);
                hist_x.push(y[..d].to_vec());
                hist_dx.push(k1[..d].to_vec());
            }
        }
        for j in 0..d {
            values[[i, j]] = y[j];
        }
    }

    let names = (0..d).map(|j| format!("x{j}")).collect();
    let series = TimeSeries::new(times.to_vec(), values, names)?;
    Ok(SimulatedModel { series, blew_up })
}

fn visit_signals(expr: &FeatureExpr, f: &mut impl FnMut(Signal)) {
    match expr {
        FeatureExpr::Constant => {}
        FeatureExpr::Monomial(factors) => {
            for (sig, _) in factors {
                f(*sig);
            }
        }
        FeatureExpr::Hill { arg, .. } => f(*arg),
        FeatureExpr::Sin(sig) => f(*sig),
    }
}

/// Shared preprocessing for one dataset: smooth, differentiate, interpolate,
/// and fix the train/validation boundary.
pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub raw: &'a TimeSeries,
    pub smoothed: TimeSeries,
    pub derivatives: TimeSeries,
    pub interpolant: Interpolant,
    /// Number of training rows; validation rows are `n_train..len`.
    pub n_train: usize,
}

impl<'a> Pipeline<'a> {
    pub fn prepare(config: &'a PipelineConfig, data: &'a TimeSeries) -> Result<Self> {
        if config.chain_driver >= data.dim() {
            return Err(Error::InvalidParams(format!(
                "chain driver {} out of range for {} components",
                config.chain_driver,
                data.dim()
            )));
        }
        let smoothed = savitzky_golay(data, &config.smoother)?;
        let derivatives = finite_difference_gradient(&smoothed)?;
        let (train, _) = split(data, &config.split)?;
        let interpolant = build_interpolant(&smoothed);
        Ok(Self { config, raw: data, smoothed, derivatives, interpolant, n_train: train.len() })
    }

    fn library_spec(&self, delayed: Signal, hill_override: Option<(f64, f64)>) -> LibrarySpec {
        let lib = &self.config.library;
        let d = self.raw.dim();
        let mut poly_signals: Vec<Signal> = (0..d).map(Signal::Component).collect();
        if lib.delayed_in_polynomials {
            poly_signals.push(delayed);
        }
        let hill = match hill_override.or(lib.hill_on_delayed) {
            Some((p0, n)) => vec![HillFeature { target: delayed, p0, n }],
            None => vec![],
        };
        LibrarySpec {
            poly_degree: lib.poly_degree,
            include_constant: lib.include_constant,
            poly_signals,
            hill,
            sin: if lib.sin_on_delayed { vec![delayed] } else { vec![] },
            extra_linear: if lib.linear_delayed { vec![delayed] } else { vec![] },
        }
    }

    fn infeasible(&self, k: usize) -> FitScore {
        FitScore {
            rss: f64::INFINITY,
            mse: f64::INFINITY,
            rel_error: vec![f64::INFINITY; self.raw.dim()],
            bic: f64::INFINITY,
            k,
            deriv_error: Some(f64::INFINITY),
            blew_up: true,
        }
    }

    /// Fits and scores one candidate.
    pub fn score_candidate(
        &self,
        cand: &Candidate,
        method: Method,
        criterion: Criterion,
    ) -> Result<(SparseModel, FitScore)> {
        let driver = self.config.chain_driver;
        let times = &self.raw.times;
        let (delayed, kernel, chain): (Signal, Option<ErlangKernel>, Option<ChainTrajectory>) =
            match method {
                Method::Lct => {
                    let p = cand.p.ok_or_else(|| {
                        Error::InvalidParams("chain candidates need an order p".into())
                    })?;
                    let kernel = ErlangKernel::from_mean(p, cand.tau)?;
                    let channel = Channel { interp: &self.interpolant, component: driver };
                    let chain = integrate_chain(&kernel, &channel, times, None)?;
                    (Signal::Chain(0), Some(kernel), Some(chain))
                }
                Method::Discrete => {
                    (Signal::Lag { component: driver, tau: cand.tau }, None, None)
                }
            };

        let spec = self.library_spec(delayed, cand.hill);
        let chain_refs: Vec<&ChainTrajectory> = chain.iter().collect();
        let library = build_library(&spec, &self.smoothed, &chain_refs, Some(&self.interpolant))?;

        // Regression rows: training segment minus the burn-in window.
        let t0 = times[0];
        let burn_end = t0 + self.config.burn_in_taus * cand.tau;
        let i0 = times.partition_point(|&t| t < burn_end).min(self.n_train);
        if self.n_train - i0 < library.ncols() + 2 {
            return Err(Error::InvalidParams(format!(
                "burn-in of {} time units leaves {} regression rows for {} features",
                burn_end - t0,
                self.n_train - i0,
                library.ncols()
            )));
        }
        let theta_train = normalize_columns(&library.slice_rows(i0, self.n_train));
        let targets_train = self.derivatives.slice_rows(i0, self.n_train)?;
        let model = stridge(&theta_train, &targets_train, &self.config.stridge)?;

        let n = self.raw.len();
        let n_val = n - self.n_train;
        let d = self.raw.dim();
        let total_chain = cand.p.unwrap_or(0);

        let score = match criterion {
            Criterion::Bic => {
                let init: Vec<f64> = (0..d).map(|j| self.smoothed.values[[0, j]]).collect();
                let sim_chains: Vec<(ErlangKernel, usize)> =
                    kernel.map(|k| vec![(k, driver)]).unwrap_or_default();
                let sim = simulate_identified(&model, &sim_chains, &init, times)?;
                if sim.blew_up {
                    self.infeasible(model.k)
                } else {
                    let mut rss = 0.0;
                    let mut rel = Vec::with_capacity(d);
                    for j in 0..d {
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for i in self.n_train..n {
                            let e = sim.series.values[[i, j]] - self.raw.values[[i, j]];
                            num += e * e;
                            den += self.raw.values[[i, j]].powi(2);
                        }
                        rss += num;
                        rel.push((num / den.max(f64::MIN_POSITIVE)).sqrt());
                    }
                    let mse = rss / (n_val * d) as f64;
                    FitScore {
                        rss,
                        mse,
                        rel_error: rel,
                        bic: bic_score(n_val, mse, model.k, self.config.alpha, total_chain),
                        k: model.k,
                        deriv_error: None,
                        blew_up: false,
                    }
                }
            }
            Criterion::DerivError => {
                // Validation derivative residual, using the raw (unnormalized)
                // library columns the denormalized model was expressed in.
                let col_of: Vec<usize> = model
                    .feature_names
                    .iter()
                    .map(|name| {
                        library.names.iter().position(|n| n == name).expect("kept column")
                    })
                    .collect();
                let mut rss = 0.0;
                let mut num_all = 0.0;
                let mut den_all = 0.0;
                let mut rel = Vec::with_capacity(d);
                for j in 0..d {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for i in self.n_train..n {
                        let mut pred = 0.0;
                        for (fi, &col) in col_of.iter().enumerate() {
                            if model.active[[fi, j]] {
                                pred += model.coefficients[[fi, j]] * library.values[[i, col]];
                            }
                        }
                        let truth = self.derivatives.values[[i, j]];
                        num += (pred - truth).powi(2);
                        den += truth * truth;
                    }
                    rss += num;
                    num_all += num;
                    den_all += den;
                    rel.push((num / den.max(f64::MIN_POSITIVE)).sqrt());
                }
                let mse = rss / (n_val * d) as f64;
                FitScore {
                    rss,
                    mse,
                    rel_error: rel,
                    bic: bic_score(n_val, mse, model.k, self.config.alpha, total_chain),
                    k: model.k,
                    deriv_error: Some((num_all / den_all.max(f64::MIN_POSITIVE)).sqrt()),
                    blew_up: false,
                }
            }
        };
        Ok((model, score))
    }
}

/// Criterion value used for ranking; non-finite scores sort last.
fn rank_value(score: &FitScore, criterion: Criterion) -> f64 {
    let v = match criterion {
        Criterion::Bic => score.bic,
        Criterion::DerivError => score.deriv_error.unwrap_or(f64::INFINITY),
    };
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn rank_key(value: f64, cand: &Candidate) -> (f64, u32, f64, usize) {
    (value, cand.p.unwrap_or(0), cand.tau, cand.index)
}

fn key_cmp(a: &(f64, u32, f64, usize), b: &(f64, u32, f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3))
}

/// Runs the full sweep with an explicit method and criterion.
pub fn run_identification(
    data: &TimeSeries,
    grid: &CandidateGrid,
    config: &PipelineConfig,
    method: Method,
    criterion: Criterion,
) -> Result<IdentifiedModel> {
    let pipeline = Pipeline::prepare(config, data)?;
    let candidates = grid.candidates(method)?;
    let scored: Vec<Result<(Candidate, SparseModel, FitScore)>> = candidates
        .par_iter()
        .map(|cand| {
            pipeline
                .score_candidate(cand, method, criterion)
                .map(|(model, score)| (*cand, model, score))
        })
        .collect();
    let mut rows = Vec::with_capacity(scored.len());
    for r in scored {
        rows.push(r?);
    }
    // Deterministic total order regardless of the parallel schedule.
    rows.sort_by(|a, b| {
        key_cmp(
            &rank_key(rank_value(&a.2, criterion), &a.0),
            &rank_key(rank_value(&b.2, criterion), &b.0),
        )
    });
    let leaderboard: Vec<LeaderboardEntry> = rows
        .iter()
        .map(|(cand, _, score)| LeaderboardEntry {
            tau: cand.tau,
            p: cand.p,
            hill: cand.hill.or(config.library.hill_on_delayed),
            bic: score.bic,
            mse: score.mse,
            k: score.k,
            deriv_error: score.deriv_error,
            index: cand.index,
        })
        .collect();
    let (winner, model, score) = rows.into_iter().next().ok_or(Error::EmptyGrid)?;
    if !rank_value(&score, criterion).is_finite() {
        return Err(Error::NoViableCandidate);
    }
    Ok(IdentifiedModel {
        model,
        tau_star: winner.tau,
        p_star: winner.p,
        hill_star: winner.hill.or(config.library.hill_on_delayed),
        score,
        leaderboard,
    })
}

/// Chain-based identification over a `(tau, p)` grid with the configured
/// criterion.
pub fn identify(
    data: &TimeSeries,
    grid: &CandidateGrid,
    config: &PipelineConfig,
) -> Result<IdentifiedModel> {
    run_identification(data, grid, config, Method::Lct, config.criterion)
}

/// Discrete-lag baseline over a `tau` grid; scoring is identical to
/// [`identify`] with no chain-length penalty.
pub fn identify_discrete_baseline(
    data: &TimeSeries,
    taus: &[f64],
    config: &PipelineConfig,
) -> Result<IdentifiedModel> {
    let grid = CandidateGrid { taus: taus.to_vec(), ..Default::default() };
    run_identification(data, &grid, config, Method::Discrete, config.criterion)
}

/// Chain-based identification ranked by the validation derivative residual.
pub fn derivative_error_select(
    data: &TimeSeries,
    grid: &CandidateGrid,
    config: &PipelineConfig,
) -> Result<IdentifiedModel> {
    run_identification(data, grid, config, Method::Lct, Criterion::DerivError)
}

/// One cell of the sampling/noise robustness table.
#[derive(Debug, Clone, Copy)]
pub struct RobustnessRow {
    pub dt: f64,
    pub eta: f64,
    /// Relative error of the reconstructed terminal chain state.
    pub err_z: f64,
    /// Relative error of the estimated mRNA derivative.
    pub err_dm: f64,
    /// Relative error of the estimated protein derivative.
    pub err_dp: f64,
}

/// Setup for [`robustness_study`].
#[derive(Debug, Clone)]
pub struct RobustnessConfig {
    pub params: Hes1Params,
    pub history: (f64, f64),
    pub t_end: f64,
    /// Generation step; every studied sampling interval must be a multiple.
    pub dt_fine: f64,
    pub smoother: SmootherConfig,
    pub seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            params: Hes1Params::baseline(),
            history: (3.0, 100.0),
            t_end: 500.0,
            dt_fine: 0.1,
            smoother: SmootherConfig::default(),
            seed: 1,
        }
    }
}

fn l2_rel(est: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Degrades the benchmark data over a sampling-interval x noise grid and
/// compares chain-state reconstruction error against derivative estimation
/// error cell by cell.
pub fn robustness_study(
    dts: &[f64],
    etas: &[f64],
    cfg: &RobustnessConfig,
) -> Result<Vec<RobustnessRow>> {
    let (ts_true, chain_true) =
        crate::simulate::simulate_hes1_full(&cfg.params, cfg.history, cfg.t_end, cfg.dt_fine)?;
    let zp_col = chain_true.ncols() - 1;
    let pr = &cfg.params;
    let n_fine = ts_true.len();
    let mut dm_true = Vec::with_capacity(n_fine);
    let mut dp_true = Vec::with_capacity(n_fine);
    for i in 0..n_fine {
        let m = ts_true.values[[i, 0]];
        let p = ts_true.values[[i, 1]];
        let zp = chain_true[[i, zp_col]];
        dm_true.push(pr.alpha_m * crate::simulate::hill(zp, pr.p0, pr.n) - pr.mu_m * m);
        dp_true.push(pr.alpha_p * m - pr.mu_p * p);
    }

    let mut rows = Vec::with_capacity(dts.len() * etas.len());
    let mut cell = 0u64;
    for &dt in dts {
        let step_f = dt / cfg.dt_fine;
        let step = step_f.round() as usize;
        if step == 0 || (step_f - step as f64).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "sampling interval {dt} is not a multiple of the generation step {}",
                cfg.dt_fine
            )));
        }
        let idx: Vec<usize> = (0..n_fine).step_by(step).collect();
        let sub_times: Vec<f64> = idx.iter().map(|&i| ts_true.times[i]).collect();
        let sub_values =
            Array2::from_shape_fn((idx.len(), 2), |(r, c)| ts_true.values[[idx[r], c]]);
        let clean =
            TimeSeries::new(sub_times.clone(), sub_values, ts_true.component_names.clone())?;
        let z_true_sub: Vec<f64> = idx.iter().map(|&i| chain_true[[i, zp_col]]).collect();
        let dm_sub: Vec<f64> = idx.iter().map(|&i| dm_true[i]).collect();
        let dp_sub: Vec<f64> = idx.iter().map(|&i| dp_true[i]).collect();

        for &eta in etas {
            cell += 1;
            let noisy = crate::signals::add_noise(
                &clean,
                &crate::signals::NoiseSpec { level: eta, seed: cfg.seed.wrapping_add(cell) },
            )?;
            let smoothed = savitzky_golay(&noisy, &cfg.smoother)?;
            let derivs = finite_difference_gradient(&smoothed)?;
            let interp = build_interpolant(&smoothed);
            let channel = Channel { interp: &interp, component: 1 };
            let chain = integrate_chain(&pr.kernel, &channel, &sub_times, None)?;
            let z_est = chain.last_state();
            rows.push(RobustnessRow {
                dt,
                eta,
                err_z: l2_rel(&z_est, &z_true_sub),
                err_dm: l2_rel(&derivs.component(0).to_vec(), &dm_sub),
                err_dp: l2_rel(&derivs.component(1).to_vec(), &dp_sub),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_logistic, LogisticParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn bic_arithmetic() {
        // N = 100, MSE = 1, k = 3, alpha = 1, total chain length 2.
        let b = bic_score(100, 1.0, 3, 1.0, 2);
        assert_abs_diff_eq!(b, 3.0 * (100.0f64).ln() + 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 15.8155, epsilon = 1e-4);
    }

    #[test]
    fn bic_grows_with_support_size() {
        for k in 0..10 {
            assert!(bic_score(50, 0.3, k + 1, 1.0, 4) > bic_score(50, 0.3, k, 1.0, 4));
        }
    }

    #[test]
    fn tie_break_prefers_small_p_then_small_tau_then_index() {
        let mk = |tau: f64, p: u32, index: usize| Candidate { tau, p: Some(p), hill: None, index };
        let a = rank_key(1.0, &mk(20.0, 2, 5));
        let b = rank_key(1.0, &mk(20.0, 5, 1));
        let c = rank_key(1.0, &mk(10.0, 2, 9));
        let d = rank_key(0.5, &mk(25.0, 100, 9));
        assert_eq!(key_cmp(&a, &b), std::cmp::Ordering::Less);
        assert_eq!(key_cmp(&c, &a), std::cmp::Ordering::Less);
        assert_eq!(key_cmp(&d, &c), std::cmp::Ordering::Less);
    }

    #[test]
    fn grid_product_order_is_tau_outer() {
        let grid =
            CandidateGrid { taus: vec![1.0, 2.0], ps: vec![3, 7], ..Default::default() };
        let cands = grid.candidates(Method::Lct).unwrap();
        let seen: Vec<(f64, u32)> = cands.iter().map(|c| (c.tau, c.p.unwrap())).collect();
        assert_eq!(seen, vec![(1.0, 3), (1.0, 7), (2.0, 3), (2.0, 7)]);
        assert!(grid.candidates(Method::Discrete).unwrap().iter().all(|c| c.p.is_none()));
        assert!(CandidateGrid::default().candidates(Method::Lct).is_err());
    }

    fn zero_model(d: usize) -> SparseModel {
        SparseModel {
            coefficients: Array2::zeros((1, d)),
            active: Array2::from_elem((1, d), false),
            feature_names: vec!["1".into()],
            feature_exprs: vec![FeatureExpr::Constant],
            k: 0,
            flags: vec![Default::default(); d],
        }
    }

    #[test]
    fn zero_model_simulates_to_a_constant() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let sim = simulate_identified(&zero_model(2), &[], &[1.5, -2.0], &times).unwrap();
        assert!(!sim.blew_up);
        for i in 0..50 {
            assert_eq!(sim.series.values[[i, 0]], 1.5);
            assert_eq!(sim.series.values[[i, 1]], -2.0);
        }
    }

    #[test]
    fn runaway_model_is_truncated_and_flagged() {
        let model = SparseModel {
            coefficients: Array2::from_shape_fn((1, 1), |_| 5.0),
            active: Array2::from_elem((1, 1), true),
            feature_names: vec!["x0".into()],
            feature_exprs: vec![FeatureExpr::Monomial(vec![(Signal::Component(0), 1)])],
            k: 1,
            flags: vec![Default::default()],
        };
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.2).collect();
        let sim = simulate_identified(&model, &[], &[1.0], &times).unwrap();
        assert!(sim.blew_up);
        let last = sim.series.values[[99, 0]];
        assert!(last.is_finite());
        assert_eq!(sim.series.values[[98, 0]], last);
    }

    #[test]
    fn chain_attachment_does_not_disturb_plain_dynamics() {
        // x' = 0.5 x with an attached but inert chain reproduces exp growth.
        let model = SparseModel {
            coefficients: Array2::from_shape_fn((1, 1), |_| 0.5),
            active: Array2::from_elem((1, 1), true),
            feature_names: vec!["x0".into()],
            feature_exprs: vec![FeatureExpr::Monomial(vec![(Signal::Component(0), 1)])],
            k: 1,
            flags: vec![Default::default()],
        };
        let kernel = ErlangKernel::from_mean(3, 2.0).unwrap();
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        let sim = simulate_identified(&model, &[(kernel, 0)], &[1.0], &times).unwrap();
        for (i, &t) in times.iter().enumerate() {
            assert_abs_diff_eq!(sim.series.values[[i, 0]], (0.5 * t).exp(), epsilon = 1e-8);
        }
    }

    fn logistic_setup() -> (TimeSeries, PipelineConfig) {
        let params = LogisticParams {
            r: 0.6,
            capacity: 1.0,
            kernel: ErlangKernel::from_mean(3, 4.0).unwrap(),
        };
        let data = simulate_logistic(&params, 0.5, 80.0, 0.1).unwrap();
        let config = PipelineConfig {
            smoother: SmootherConfig { window_span: 1.0, poly_degree: 3 },
            library: LibraryConfig {
                poly_degree: 2,
                include_constant: true,
                delayed_in_polynomials: true,
                ..Default::default()
            },
            ..Default::default()
        };
        (data, config)
    }

    #[test]
    fn single_candidate_grid_returns_that_candidate() {
        let (data, config) = logistic_setup();
        let grid = CandidateGrid { taus: vec![4.0], ps: vec![3], ..Default::default() };
        let out = identify(&data, &grid, &config).unwrap();
        assert_eq!(out.tau_star, 4.0);
        assert_eq!(out.p_star, Some(3));
        assert_eq!(out.leaderboard.len(), 1);
        assert!(out.score.bic.is_finite());
    }

    #[test]
    fn winner_tops_the_leaderboard() {
        let (data, config) = logistic_setup();
        let grid =
            CandidateGrid { taus: vec![2.0, 4.0, 6.0], ps: vec![1, 3], ..Default::default() };
        let out = identify(&data, &grid, &config).unwrap();
        assert!(out.leaderboard.windows(2).all(|w| w[0].bic <= w[1].bic));
        assert_eq!(out.score.bic, out.leaderboard[0].bic);
        assert_eq!(out.leaderboard.len(), 6);
    }
}
