//! Ridge regression with K-fold selection of the penalty, and the
//! training-mean baseline.
//!
//! The ridge estimate is computed on column-centered data with an
//! unpenalized intercept:
//!
//! ```text
//! (Xc' Xc + alpha I) w = Xc' yc,    b = mean(y) - mean(X)' w
//! ```
//!
//! One symmetric eigendecomposition per training set serves every candidate
//! penalty. When there are more features than rows the dual (Gram) form is
//! decomposed instead, so the cost is governed by `min(n, d)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matvec, mean, rng_from_seed, sample_variance, select, select_rows, Standardizer};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("singular system: alpha = 0 with rank-deficient centered design")]
    SingularSystem,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty training set")]
    EmptyTraining,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// 17 log-spaced penalties from 1e-4 to 1e4.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..17).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RidgeOptions {
    /// Scale columns to unit variance as well as centering them.
    pub standardize: bool,
}

/// Fitted ridge model. `weights` and `intercept` act on raw features; the
/// standardization record documents how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub standardization: Standardizer,
    pub target_mean: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, RegressError> {
        if x.ncols() != self.weights.len() {
            return Err(RegressError::DimensionMismatch(format!(
                "model has {} weights, input has {} columns",
                self.weights.len(),
                x.ncols()
            )));
        }
        Ok(matvec(x, &self.weights, self.intercept))
    }
}

pub fn predict(model: &RidgeModel, x: &DMatrix<f64>) -> Result<Vec<f64>, RegressError> {
    model.predict(x)
}

enum Basis {
    /// Eigenvectors of Xc'Xc (d x d) and V'Xc'yc.
    Primal { vectors: DMatrix<f64>, proj: DVector<f64> },
    /// Eigenvectors of XcXc' (n x n), U'yc, and Xc for mapping back.
    Dual {
        vectors: DMatrix<f64>,
        proj: DVector<f64>,
        xc: DMatrix<f64>,
    },
}

/// Everything needed to solve one training set for any penalty.
struct RidgePath {
    standardizer: Standardizer,
    y_mean: f64,
    eigenvalues: DVector<f64>,
    basis: Basis,
}

impl RidgePath {
    fn new(x: &DMatrix<f64>, y: &[f64], opts: &RidgeOptions) -> Result<Self, RegressError> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(RegressError::DimensionMismatch(format!(
                "{n} rows but {} targets",
                y.len()
            )));
        }
        if n < 2 {
            return Err(RegressError::InvalidArgument(format!(
                "ridge needs at least 2 rows, got {n}"
            )));
        }
        if d == 0 {
            return Err(RegressError::DimensionMismatch("no feature columns".into()));
        }
        let standardizer = if opts.standardize {
            Standardizer::fit(x)
        } else {
            Standardizer::fit_center(x)
        };
        let xc = standardizer.apply(x);
        let y_mean = mean(y);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let (eigenvalues, basis) = if d <= n {
            let eig = SymmetricEigen::new(xc.transpose() * &xc);
            let proj = eig.eigenvectors.transpose() * (xc.transpose() * &yc);
            (eig.eigenvalues, Basis::Primal { vectors: eig.eigenvectors, proj })
        } else {
            let eig = SymmetricEigen::new(&xc * xc.transpose());
            let proj = eig.eigenvectors.transpose() * &yc;
            (
                eig.eigenvalues,
                Basis::Dual {
                    vectors: eig.eigenvectors,
                    proj,
                    xc,
                },
            )
        };
        Ok(RidgePath {
            standardizer,
            y_mean,
            eigenvalues,
            basis,
        })
    }

    /// Weights on the standardized scale.
    fn solve(&self, alpha: f64) -> Result<DVector<f64>, RegressError> {
        let top = self.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let tol = self.eigenvalues.len() as f64 * f64::EPSILON * top.max(f64::MIN_POSITIVE);
        if alpha == 0.0 && (top == 0.0 || self.eigenvalues.iter().any(|&l| l <= tol)) {
            return Err(RegressError::SingularSystem);
        }
        let scale = |proj: &DVector<f64>| {
            DVector::from_iterator(
                proj.len(),
                proj.iter()
                    .zip(self.eigenvalues.iter())
                    .map(|(c, l)| c / (l.max(0.0) + alpha)),
            )
        };
        Ok(match &self.basis {
            Basis::Primal { vectors, proj } => vectors * scale(proj),
            Basis::Dual { vectors, proj, xc } => xc.transpose() * (vectors * scale(proj)),
        })
    }

    fn model(&self, alpha: f64) -> Result<RidgeModel, RegressError> {
        let w = self.solve(alpha)?;
        let (weights, intercept) = self
            .standardizer
            .unscale_coefficients(w.as_slice(), self.y_mean);
        Ok(RidgeModel {
            weights,
            intercept,
            alpha,
            standardization: self.standardizer.clone(),
            target_mean: self.y_mean,
        })
    }
}

pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> Result<RidgeModel, RegressError> {
    fit_ridge_with(x, y, alpha, &RidgeOptions::default())
}

pub fn fit_ridge_with(
    x: &DMatrix<f64>,
    y: &[f64],
    alpha: f64,
    opts: &RidgeOptions,
) -> Result<RidgeModel, RegressError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(RegressError::InvalidArgument(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    RidgePath::new(x, y, opts)?.model(alpha)
}

/// Seeded shuffle of `0..n`, cut into `k` contiguous blocks (the first
/// `n % k` blocks get one extra row). Returns the held-out rows per fold.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    folds
}

/// Rows not in `held_out`, in increasing order.
pub fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    held_out.iter().for_each(|&i| mask[i] = false);
    (0..n).filter(|&i| mask[i]).collect()
}

pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    /// Held-out MAE per fold at the chosen penalty.
    pub fold_mae: Vec<f64>,
    pub mae_mean: f64,
    /// Sample standard deviation of `fold_mae` over `sqrt(folds)`.
    pub mae_se: f64,
    pub chosen_alpha: f64,
    /// Candidate penalties (ascending) and their mean fold MAE; singular
    /// candidates score `null`.
    pub grid: Vec<f64>,
    pub grid_mae: Vec<Option<f64>>,
    /// Mean squared out-of-fold residual at the chosen penalty.
    pub oof_mse: f64,
}

/// Picks the penalty with the lowest mean held-out MAE (ties go to the
/// smaller penalty), then refits on all rows.
pub fn fit_ridge_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    alpha_grid: &[f64],
    k: usize,
    seed: u64,
    opts: &RidgeOptions,
) -> Result<(RidgeModel, CvReport), RegressError> {
    let n = x.nrows();
    if y.len() != n {
        return Err(RegressError::DimensionMismatch(format!(
            "{n} rows but {} targets",
            y.len()
        )));
    }
    if alpha_grid.is_empty() {
        return Err(RegressError::InvalidArgument("empty alpha grid".into()));
    }
    if k < 2 || k > n {
        return Err(RegressError::InvalidArgument(format!(
            "need 2 <= K <= n, got K = {k}, n = {n}"
        )));
    }
    if let Some(a) = alpha_grid.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(RegressError::InvalidArgument(format!("bad alpha {a}")));
    }
    let mut grid = alpha_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let folds = kfold_indices(n, k, seed);
    // per fold: (per-alpha MAE or None, per-alpha held-out residuals)
    let per_fold: Vec<Vec<Option<(f64, Vec<f64>)>>> = folds
        .par_iter()
        .map(|test| {
            let train = complement(n, test);
            let path = RidgePath::new(&select_rows(x, &train), &select(y, &train), opts)?;
            let xt = select_rows(x, test);
            let yt = select(y, test);
            grid.iter()
                .map(|&alpha| match path.model(alpha) {
                    Ok(m) => {
                        let pred = m.predict(&xt)?;
                        let resid: Vec<f64> = pred.iter().zip(&yt).map(|(p, t)| t - p).collect();
                        Ok(Some((mae(&pred, &yt), resid)))
                    }
                    Err(RegressError::SingularSystem) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect::<Result<_, RegressError>>()?;

    let grid_mae: Vec<Option<f64>> = (0..grid.len())
        .map(|a| {
            per_fold
                .iter()
                .map(|f| f[a].as_ref().map(|(m, _)| *m))
                .sum::<Option<f64>>()
                .map(|s| s / k as f64)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in grid_mae.iter().enumerate() {
        if let Some(m) = *m {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    let (chosen, mae_mean) = best.ok_or(RegressError::SingularSystem)?;
    let fold_mae: Vec<f64> = per_fold
        .iter()
        .map(|f| f[chosen].as_ref().map(|(m, _)| *m).unwrap())
        .collect();
    let residuals: Vec<f64> = per_fold
        .iter()
        .flat_map(|f| f[chosen].as_ref().unwrap().1.iter().copied())
        .collect();
    let oof_mse = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    let alpha = grid[chosen];
    let model = fit_ridge_with(x, y, alpha, opts)?;
    let report = CvReport {
        folds: k,
        mae_se: (sample_variance(&fold_mae) / k as f64).sqrt(),
        fold_mae,
        mae_mean,
        chosen_alpha: alpha,
        grid,
        grid_mae,
        oof_mse,
    };
    Ok((model, report))
}

/// Predicts the training mean everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPredictor {
    pub mean: f64,
}

impl MeanPredictor {
    pub fn predict(&self, n: usize) -> Vec<f64> {
        vec![self.mean; n]
    }
}

pub fn mean_baseline(y_train: &[f64]) -> Result<MeanPredictor, RegressError> {
    if y_train.is_empty() {
        return Err(RegressError::EmptyTraining);
    }
    Ok(MeanPredictor { mean: mean(y_train) })
}
