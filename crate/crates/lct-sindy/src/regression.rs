//! Sequentially thresholded ridge regression: alternate ridge solves and
//! magnitude thresholding until the active support stabilizes, then refit the
//! surviving support without the penalty so reported coefficients are
//! unbiased.

use crate::features::{FeatureExpr, FeatureMatrix};
use crate::signals::TimeSeries;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

/// Solver knobs. The threshold applies to coefficients of the fully
/// normalized problem (unit-norm columns, unit-norm target), which makes it
/// dimensionless across heterogeneous libraries and target magnitudes.
#[derive(Debug, Clone, Copy)]
pub struct STRidgeConfig {
    /// L2 penalty used during the threshold-refit iterations.
    pub ridge: f64,
    /// Magnitude cutoff on normalized-scale coefficients.
    pub threshold: f64,
    pub max_iters: usize,
}

impl Default for STRidgeConfig {
    fn default() -> Self {
        Self { ridge: 1e-6, threshold: 0.05, max_iters: 25 }
    }
}

/// Per-component solver diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitFlags {
    /// Thresholding removed every term; the zero model was returned.
    pub empty_support: bool,
    /// The active submatrix was rank-deficient; the minimum-norm solution
    /// was used.
    pub rank_deficient: bool,
}

/// Sparse coefficient matrix in original (denormalized) units.
#[derive(Debug, Clone)]
pub struct SparseModel {
    /// P x d coefficients; inactive entries are exactly zero.
    pub coefficients: Array2<f64>,
    /// P x d active-term mask.
    pub active: Array2<bool>,
    pub feature_names: Vec<String>,
    pub feature_exprs: Vec<FeatureExpr>,
    /// Total number of active terms across all components.
    pub k: usize,
    pub flags: Vec<FitFlags>,
}

impl SparseModel {
    /// Active `(feature, coefficient)` pairs for component `j`.
    pub fn terms(&self, j: usize) -> Vec<(&str, f64)> {
        (0..self.coefficients.nrows())
            .filter(|&i| self.active[[i, j]])
            .map(|i| (self.feature_names[i].as_str(), self.coefficients[[i, j]]))
            .collect()
    }

    /// Names of the active features for component `j`.
    pub fn support(&self, j: usize) -> Vec<&str> {
        self.terms(j).into_iter().map(|(n, _)| n).collect()
    }
}

fn to_dmatrix(values: &Array2<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(values.nrows(), cols.len(), |r, c| values[[r, cols[c]]])
}

/// Ridge solve on the selected columns; `ridge = 0` falls back to the
/// SVD least-squares path.
fn ridge_solve(theta: &Array2<f64>, cols: &[usize], y: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let a = to_dmatrix(theta, cols);
    if ridge > 0.0 {
        let mut gram = a.transpose() * &a;
        for i in 0..cols.len() {
            gram[(i, i)] += ridge;
        }
        let rhs = a.transpose() * y;
        if let Some(sol) = gram.clone().cholesky().map(|c| c.solve(&rhs)) {
            return sol;
        }
        if let Some(sol) = gram.lu().solve(&rhs) {
            return sol;
        }
    }
    lstsq_min_norm(&a, y).0
}

/// Minimum-norm least squares via SVD; also reports rank deficiency.
fn lstsq_min_norm(a: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let ncols = a.ncols();
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = max_sv * a.nrows().max(ncols) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let sol = svd
        .solve(y, eps)
        .unwrap_or_else(|_| DVector::zeros(ncols));
    (sol, rank < ncols)
}

/// Sequentially thresholded ridge regression, one sparse fit per target
/// component.
///
/// `theta` is expected in column-normalized form (see
/// [`crate::features::normalize_columns`]); each target column is further
/// scaled to unit norm internally so the threshold is unit-free. The final
/// coefficients are reported in original units via the recorded scales.
pub fn stridge(theta: &FeatureMatrix, targets: &TimeSeries, cfg: &STRidgeConfig) -> Result<SparseModel> {
    let n = theta.nrows();
    if targets.len() != n {
        return Err(Error::InvalidParams(format!(
            "{} target rows for {} library rows",
            targets.len(),
            n
        )));
    }
    let p = theta.ncols();
    if p == 0 {
        return Err(Error::InvalidLibrary("library has no columns".into()));
    }
    let d = targets.dim();
    let mut coefficients = Array2::zeros((p, d));
    let mut active_mask = Array2::from_elem((p, d), false);
    let mut flags = vec![FitFlags::default(); d];

    for j in 0..d {
        let y_raw = DVector::from_fn(n, |i, _| targets.values[[i, j]]);
        let y_norm = y_raw.norm();
        if y_norm == 0.0 {
            flags[j].empty_support = true;
            continue;
        }
        let y = &y_raw / y_norm;

        let mut active: Vec<usize> = (0..p).collect();
        for _ in 0..cfg.max_iters {
            let beta = ridge_solve(&theta.values, &active, &y, cfg.ridge);
            let survivors: Vec<usize> = active
                .iter()
                .enumerate()
                .filter(|(bi, _)| beta[*bi].abs() >= cfg.threshold)
                .map(|(_, &col)| col)
                .collect();
            if survivors.is_empty() {
                active.clear();
                break;
            }
            if survivors == active {
                break;
            }
            active = survivors;
        }

        if active.is_empty() {
            flags[j].empty_support = true;
            continue;
        }
        // Unpenalized refit on the converged support.
        let (beta, deficient) = lstsq_min_norm(&to_dmatrix(&theta.values, &active), &y);
        flags[j].rank_deficient = deficient;
        for (bi, &col) in active.iter().enumerate() {
            coefficients[[col, j]] = beta[bi] * y_norm / theta.column_scales[col];
            active_mask[[col, j]] = true;
        }
    }

    let k = active_mask.iter().filter(|&&a| a).count();
    Ok(SparseModel {
        coefficients,
        active: active_mask,
        feature_names: theta.names.clone(),
        feature_exprs: theta.exprs.clone(),
        k,
        flags,
    })
}

/// Sequential thresholded least squares: [`stridge`] with no ridge penalty.
pub fn stlsq(theta: &FeatureMatrix, targets: &TimeSeries, threshold: f64) -> Result<SparseModel> {
    stridge(theta, targets, &STRidgeConfig { ridge: 0.0, threshold, max_iters: 25 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_library, normalize_columns, LibrarySpec, Signal};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn matrix_to_features(values: Array2<f64>) -> FeatureMatrix {
        let p = values.ncols();
        FeatureMatrix {
            names: (0..p).map(|i| format!("f{i}")).collect(),
            exprs: (0..p).map(|_| FeatureExpr::Constant).collect(),
            values,
            column_scales: vec![1.0; p],
            dropped: Vec::new(),
        }
    }

    fn targets_from(col: Vec<f64>) -> TimeSeries {
        let n = col.len();
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let values = Array2::from_shape_fn((n, 1), |(i, _)| col[i]);
        TimeSeries::new(times, values, vec!["y".into()]).unwrap()
    }

    #[test]
    fn orthonormal_projection_recovers_single_term() {
        let n = 8;
        let values = Array2::from_shape_fn((n, 4), |(r, c)| if r == c { 1.0 } else { 0.0 });
        let theta = matrix_to_features(values);
        let y: Vec<f64> = (0..n).map(|i| if i == 2 { 2.0 } else { 0.0 }).collect();
        let model = stridge(
            &theta,
            &targets_from(y),
            &STRidgeConfig { ridge: 0.0, threshold: 0.5, max_iters: 25 },
        )
        .unwrap();
        assert_eq!(model.k, 1);
        assert!(model.active[[2, 0]]);
        assert_abs_diff_eq!(model.coefficients[[2, 0]], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_target_yields_flagged_zero_model() {
        let n = 6;
        let values = Array2::from_shape_fn((n, 2), |(r, c)| if r == c { 1.0 } else { 0.0 });
        let theta = matrix_to_features(values);
        let y: Vec<f64> = (0..n).map(|i| if i == 5 { 3.0 } else { 0.0 }).collect();
        let model = stridge(&theta, &targets_from(y), &STRidgeConfig::default()).unwrap();
        assert_eq!(model.k, 0);
        assert!(model.flags[0].empty_support);
        assert!(model.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn threshold_above_everything_zeroes_the_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values = Array2::from_shape_fn((30, 4), |_| rng.gen_range(-1.0..1.0));
        let theta = matrix_to_features(values.clone());
        let y: Vec<f64> = (0..30).map(|i| 0.01 * values[[i, 1]]).collect();
        let model = stlsq(&theta, &targets_from(y), 1e6).unwrap();
        assert_eq!(model.k, 0);
        assert!(model.flags[0].empty_support);
    }

    #[test]
    fn stlsq_equals_stridge_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values = Array2::from_shape_fn((40, 5), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..40).map(|i| 2.0 * values[[i, 0]] - 1.5 * values[[i, 3]]).collect();
        let theta = matrix_to_features(values);
        let a = stlsq(&theta, &targets_from(y.clone()), 0.05).unwrap();
        let b = stridge(
            &theta,
            &targets_from(y),
            &STRidgeConfig { ridge: 0.0, threshold: 0.05, max_iters: 25 },
        )
        .unwrap();
        assert_eq!(a.active, b.active);
        for (x, y) in a.coefficients.iter().zip(b.coefficients.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn idempotent_on_its_own_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values = Array2::from_shape_fn((60, 6), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> =
            (0..60).map(|i| 1.2 * values[[i, 1]] + 0.8 * values[[i, 4]]).collect();
        let theta = matrix_to_features(values.clone());
        let cfg = STRidgeConfig::default();
        let first = stridge(&theta, &targets_from(y.clone()), &cfg).unwrap();
        let support: Vec<usize> = (0..6).filter(|&i| first.active[[i, 0]]).collect();
        assert!(!support.is_empty());

        let sub = Array2::from_shape_fn((60, support.len()), |(r, c)| values[[r, support[c]]]);
        let second = stridge(&matrix_to_features(sub), &targets_from(y), &cfg).unwrap();
        assert_eq!(second.k, support.len());
        for (c, &col) in support.iter().enumerate() {
            assert_abs_diff_eq!(
                second.coefficients[[c, 0]],
                first.coefficients[[col, 0]],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn column_scaling_leaves_selection_and_fit_invariant() {
        // Scaling a raw feature column by c: the normalized problem, the
        // support, and coefficient*feature products are unchanged; the
        // denormalized coefficient scales by 1/c.
        let n = 30;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.2).collect();
        let mk = |scale: f64| {
            let values = Array2::from_shape_fn((n, 2), |(i, j)| {
                let t = i as f64 * 0.2;
                if j == 0 { (1.1 * t).sin() } else { scale * (0.4 * t).cos() }
            });
            TimeSeries::new(times.clone(), values, vec!["u".into(), "v".into()]).unwrap()
        };
        let spec = LibrarySpec {
            poly_degree: 1,
            include_constant: true,
            poly_signals: vec![Signal::Component(0), Signal::Component(1)],
            ..Default::default()
        };
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * 0.2;
                0.7 * (1.1 * t).sin() - 0.2 * (0.4 * t).cos()
            })
            .collect();
        let cfg = STRidgeConfig::default();
        let base = normalize_columns(&build_library(&spec, &mk(1.0), &[], None).unwrap());
        let scaled = normalize_columns(&build_library(&spec, &mk(10.0), &[], None).unwrap());
        for c in 0..base.ncols() {
            for r in 0..n {
                assert_abs_diff_eq!(base.values[[r, c]], scaled.values[[r, c]], epsilon = 1e-12);
            }
        }
        let m1 = stridge(&base, &targets_from(y.clone()), &cfg).unwrap();
        let m2 = stridge(&scaled, &targets_from(y), &cfg).unwrap();
        assert_eq!(m1.active, m2.active);
        // v column scaled by 10 -> coefficient shrinks by 10.
        assert_abs_diff_eq!(m1.coefficients[[2, 0]], 10.0 * m2.coefficients[[2, 0]], epsilon = 1e-9);
    }

    /// Brute-force oracle: best 2-subset by residual norm.
    fn best_two_subset(values: &Array2<f64>, y: &[f64]) -> (Vec<usize>, Vec<f64>) {
        use nalgebra::{DMatrix, DVector};
        let n = values.nrows();
        let p = values.ncols();
        let yv = DVector::from_fn(n, |i, _| y[i]);
        let mut best: (f64, Vec<usize>, Vec<f64>) = (f64::INFINITY, vec![], vec![]);
        for i in 0..p {
            for j in i + 1..p {
                let a = DMatrix::from_fn(n, 2, |r, c| values[[r, if c == 0 { i } else { j }]]);
                let beta = a.clone().svd(true, true).solve(&yv, 1e-13).unwrap();
                let rss = (&a * &beta - &yv).norm_squared();
                if rss < best.0 {
                    best = (rss, vec![i, j], vec![beta[0], beta[1]]);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn planted_support_recovery_matches_brute_force() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let raw = Array2::from_shape_fn((200, 8), |_| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let i = rng.gen_range(0..8usize);
            let mut j = rng.gen_range(0..8usize);
            while j == i {
                j = rng.gen_range(0..8usize);
            }
            let ci = rng.gen_range(1.0..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let cj = rng.gen_range(1.0..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let y: Vec<f64> = (0..200).map(|r| ci * raw[[r, i]] + cj * raw[[r, j]]).collect();

            let theta = normalize_columns(&matrix_to_features(raw.clone()));
            let model = stridge(
                &theta,
                &targets_from(y.clone()),
                &STRidgeConfig { ridge: 1e-10, threshold: 0.02, max_iters: 25 },
            )
            .unwrap();
            let got: Vec<usize> = (0..8).filter(|&c| model.active[[c, 0]]).collect();
            let (oracle_support, oracle_coef) = best_two_subset(&raw, &y);
            let mut expect = vec![i, j];
            expect.sort_unstable();
            assert_eq!(got, expect, "seed {seed}");
            assert_eq!(oracle_support, expect, "oracle disagrees at seed {seed}");
            for (pos, &col) in expect.iter().enumerate() {
                assert_abs_diff_eq!(
                    model.coefficients[[col, 0]],
                    oracle_coef[pos],
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn support_size_shrinks_as_threshold_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let raw = Array2::from_shape_fn((120, 7), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let y: Vec<f64> = (0..120)
            .map(|r| 2.0 * raw[[r, 0]] + 0.5 * raw[[r, 2]] + 0.05 * raw[[r, 5]])
            .collect();
        let theta = normalize_columns(&matrix_to_features(raw));
        let mut ks = Vec::new();
        let mut lambda = 1e-4;
        while lambda <= 1.0 {
            ks.push(stlsq(&theta, &targets_from(y.clone()), lambda).unwrap().k);
            lambda *= 3.0;
        }
        assert!(ks.windows(2).all(|w| w[1] <= w[0]), "not monotone: {ks:?}");
        assert!(ks.last().unwrap() < ks.first().unwrap());
    }
}
