//! Candidate-term library: symbolic description and numeric evaluation of
//! the regression features over observed states, chain outputs, and lagged
//! states.

use crate::lct::ChainTrajectory;
use crate::preprocess::Interpolant;
use crate::signals::TimeSeries;
use crate::{Error, Result};
use ndarray::{s, Array2};

/// A base signal a feature can reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Signal {
    /// Observed state component (index into the series columns).
    Component(usize),
    /// Terminal state of chain `k`.
    Chain(usize),
    /// Lagged observed state `x_c(t - tau)` read from an interpolant.
    Lag { component: usize, tau: f64 },
}

/// One library column as a symbolic expression.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureExpr {
    Constant,
    /// Product of signal powers; factors ordered by base-signal position.
    Monomial(Vec<(Signal, u32)>),
    /// Saturating repression `1 / (1 + (v / p0)^n)`.
    Hill { arg: Signal, p0: f64, n: f64 },
    Sin(Signal),
}

/// Hill feature declaration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillFeature {
    pub target: Signal,
    pub p0: f64,
    pub n: f64,
}

/// What goes into the candidate library.
///
/// Columns are emitted in the order
/// `[constant | degree 1 | ... | degree poly_degree | hill | sin | extras]`,
/// with monomials in graded-lexicographic order over `poly_signals`.
#[derive(Debug, Clone, Default)]
pub struct LibrarySpec {
    pub poly_degree: u32,
    pub include_constant: bool,
    /// Base signals entering the polynomial block.
    pub poly_signals: Vec<Signal>,
    pub hill: Vec<HillFeature>,
    pub sin: Vec<Signal>,
    /// Bare degree-1 columns appended after the structured blocks; used for
    /// raw lagged-state features in the discrete-delay baseline.
    pub extra_linear: Vec<Signal>,
}

/// Evaluated library: named columns over the sample grid.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub exprs: Vec<FeatureExpr>,
    /// N x P values.
    pub values: Array2<f64>,
    /// Pre-normalization column 2-norms (1.0 before [`normalize_columns`]).
    pub column_scales: Vec<f64>,
    /// Names of columns dropped because they were identically zero.
    pub dropped: Vec<String>,
}

impl FeatureMatrix {
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    /// Restriction to sample rows `[start, end)`; scales are kept as-is.
    pub fn slice_rows(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            exprs: self.exprs.clone(),
            values: self.values.slice(s![start..end, ..]).to_owned(),
            column_scales: self.column_scales.clone(),
            dropped: self.dropped.clone(),
        }
    }
}

/// Context needed to turn signals into names and numbers.
struct EvalContext<'a> {
    ts: &'a TimeSeries,
    chain_terminals: Vec<Vec<f64>>,
    lag_interp: Option<&'a Interpolant>,
}

impl EvalContext<'_> {
    fn signal_name(&self, sig: &Signal) -> String {
        match sig {
            Signal::Component(c) => self.ts.component_names[*c].clone(),
            Signal::Chain(k) => {
                if self.chain_terminals.len() <= 1 {
                    "z".to_string()
                } else {
                    format!("z{}", k + 1)
                }
            }
            Signal::Lag { component, tau } => {
                format!("{}(t-{})", self.ts.component_names[*component], tau)
            }
        }
    }

    fn signal_value(&self, sig: &Signal, row: usize) -> Result<f64> {
        Ok(match sig {
            Signal::Component(c) => self.ts.values[[row, *c]],
            Signal::Chain(k) => {
                let term = self.chain_terminals.get(*k).ok_or_else(|| {
                    Error::InvalidLibrary(format!("feature references missing chain {k}"))
                })?;
                term[row]
            }
            Signal::Lag { component, tau } => {
                let interp = self.lag_interp.ok_or_else(|| {
                    Error::InvalidLibrary("lag feature requires an interpolant".into())
                })?;
                interp.eval_component(*component, self.ts.times[row] - tau)
            }
        })
    }
}

fn expr_name(expr: &FeatureExpr, ctx: &EvalContext) -> String {
    match expr {
        FeatureExpr::Constant => "1".to_string(),
        FeatureExpr::Monomial(factors) => factors
            .iter()
            .map(|(sig, pow)| {
                let base = ctx.signal_name(sig);
                if *pow == 1 { base } else { format!("{base}^{pow}") }
            })
            .collect::<Vec<_>>()
            .join("*"),
        FeatureExpr::Hill { arg, p0, n } => {
            format!("hill({},p0={},n={})", ctx.signal_name(arg), p0, n)
        }
        FeatureExpr::Sin(sig) => format!("sin({})", ctx.signal_name(sig)),
    }
}

fn expr_value(expr: &FeatureExpr, ctx: &EvalContext, row: usize) -> Result<f64> {
    Ok(match expr {
        FeatureExpr::Constant => 1.0,
        FeatureExpr::Monomial(factors) => {
            let mut v = 1.0;
            for (sig, pow) in factors {
                v *= ctx.signal_value(sig, row)?.powi(*pow as i32);
            }
            v
        }
        FeatureExpr::Hill { arg, p0, n } => crate::simulate::hill(ctx.signal_value(arg, row)?, *p0, *n),
        FeatureExpr::Sin(sig) => ctx.signal_value(sig, row)?.sin(),
    })
}

/// Multi-indices of total degree `deg` over `k` bases, lexicographic within
/// the degree (all weight on the first base first).
fn multi_indices(k: usize, deg: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() == k - 1 {
        let used: u32 = prefix.iter().sum();
        prefix.push(deg - used);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    let used: u32 = prefix.iter().sum();
    for d in (0..=deg - used).rev() {
        prefix.push(d);
        multi_indices(k, deg, prefix, out);
        prefix.pop();
    }
}

/// Expands a [`LibrarySpec`] into the ordered list of feature expressions.
pub fn expand_library(spec: &LibrarySpec) -> Vec<FeatureExpr> {
    let mut exprs = Vec::new();
    if spec.include_constant {
        exprs.push(FeatureExpr::Constant);
    }
    let k = spec.poly_signals.len();
    if k > 0 {
        for deg in 1..=spec.poly_degree {
            let mut idx = Vec::new();
            multi_indices(k, deg, &mut Vec::new(), &mut idx);
            for powers in idx {
                let factors: Vec<(Signal, u32)> = powers
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(i, &p)| (spec.poly_signals[i], p))
                    .collect();
                exprs.push(FeatureExpr::Monomial(factors));
            }
        }
    }
    for h in &spec.hill {
        exprs.push(FeatureExpr::Hill { arg: h.target, p0: h.p0, n: h.n });
    }
    for sig in &spec.sin {
        exprs.push(FeatureExpr::Sin(*sig));
    }
    for sig in &spec.extra_linear {
        exprs.push(FeatureExpr::Monomial(vec![(*sig, 1)]));
    }
    exprs
}

/// Evaluates the library on a series. `chains` must share the series' grid;
/// lag features read from `lag_interp` (clamped outside its domain).
pub fn build_library(
    spec: &LibrarySpec,
    ts: &TimeSeries,
    chains: &[&ChainTrajectory],
    lag_interp: Option<&Interpolant>,
) -> Result<FeatureMatrix> {
    for h in &spec.hill {
        if !(h.p0 > 0.0) {
            return Err(Error::InvalidLibrary(format!("hill threshold p0 = {} must be positive", h.p0)));
        }
    }
    let mut chain_terminals = Vec::with_capacity(chains.len());
    for chain in chains {
        if chain.times.len() != ts.len() || chain.times != ts.times {
            return Err(Error::InvalidLibrary("chain grid differs from the series grid".into()));
        }
        chain_terminals.push(chain.last_state());
    }
    let ctx = EvalContext { ts, chain_terminals, lag_interp };
    let exprs = expand_library(spec);
    let names: Vec<String> = exprs.iter().map(|e| expr_name(e, &ctx)).collect();
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(Error::InvalidLibrary(format!("duplicate feature `{name}`")));
        }
    }
    let n = ts.len();
    let mut values = Array2::zeros((n, exprs.len()));
    for (col, expr) in exprs.iter().enumerate() {
        for row in 0..n {
            values[[row, col]] = expr_value(expr, &ctx, row)?;
        }
    }
    let scales = vec![1.0; exprs.len()];
    Ok(FeatureMatrix { names, exprs, values, column_scales: scales, dropped: Vec::new() })
}

/// Divides every column by its 2-norm, recording the scales so that learned
/// coefficients can be reported in original units. Identically zero columns
/// are dropped and listed in `dropped`.
pub fn normalize_columns(fm: &FeatureMatrix) -> FeatureMatrix {
    let n = fm.nrows();
    let mut keep = Vec::new();
    let mut dropped = fm.dropped.clone();
    let mut scales = Vec::new();
    for col in 0..fm.ncols() {
        let norm = fm.values.column(col).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            dropped.push(fm.names[col].clone());
        } else {
            keep.push(col);
            scales.push(norm * fm.column_scales[col]);
        }
    }
    let mut values = Array2::zeros((n, keep.len()));
    for (new_col, &col) in keep.iter().enumerate() {
        let norm = fm.values.column(col).iter().map(|v| v * v).sum::<f64>().sqrt();
        for row in 0..n {
            values[[row, new_col]] = fm.values[[row, col]] / norm;
        }
    }
    FeatureMatrix {
        names: keep.iter().map(|&c| fm.names[c].clone()).collect(),
        exprs: keep.iter().map(|&c| fm.exprs[c].clone()).collect(),
        values,
        column_scales: scales,
        dropped,
    }
}
