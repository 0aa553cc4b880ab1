//! Identification of distributed-delay differential equations from time-series data.
//!
//! The pipeline represents a gamma/Erlang-distributed delay by its equivalent
//! first-order ODE cascade (the linear chain trick), reconstructs the delayed
//! state directly from smoothed measurements, and selects a sparse model over a
//! grid of candidate delay kernels:
//!
//! 1. [`signals`] — time-series container, noise injection, splitting, CSV I/O.
//! 2. [`preprocess`] — Savitzky-Golay smoothing, derivative estimation, and a
//!    shape-preserving interpolant that drives the chain.
//! 3. [`lct`] — Erlang kernels, chain integration, and a quadrature oracle.
//! 4. [`simulate`] — ground-truth generators for the benchmark systems.
//! 5. [`features`] — candidate library construction and column normalization.
//! 6. [`regression`] — sequentially thresholded ridge regression.
//! 7. [`selection`] — the outer (tau, p, Hill) grid search with BIC or
//!    validation-derivative scoring, plus the discrete-lag baseline.
//! 8. [`cli`] — experiment configs, reports, and reproduction drivers.

pub mod cli;
pub mod features;
pub mod lct;
pub mod preprocess;
pub mod regression;
pub mod selection;
pub mod signals;
pub mod simulate;

use thiserror::Error;

/// Errors produced by the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time series: {0}")]
    InvalidSeries(String),
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("split too extreme: {0}")]
    SplitTooExtreme(String),
    #[error("smoother requires uniform sampling")]
    NonUniformGrid,
    #[error("invalid smoother config: {0}")]
    InvalidSmoother(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid library: {0}")]
    InvalidLibrary(String),
    #[error("candidate grid is empty")]
    EmptyGrid,
    #[error("no viable candidate: every grid point diverged")]
    NoViableCandidate,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
