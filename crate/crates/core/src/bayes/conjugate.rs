use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{check_xy, BayesError};
use crate::dist::PredictiveDistribution;
use crate::linalg::{sample_variance, Standardizer};
use crate::regress::{default_alpha_grid, fit_ridge_cv, RidgeOptions};

const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateConfig {
    /// Prior variance of each weight.
    pub c: f64,
    /// Known noise variance.
    pub sigma2: f64,
    pub intercept: bool,
    pub intercept_sd: f64,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        ConjugateConfig {
            c: 1.0,
            sigma2: 1.0,
            intercept: true,
            intercept_sd: 5.0,
        }
    }
}

/// `w~ | D ~ N(mean, cov)` over `[w, b]` (or `w` alone without intercept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub sigma2: f64,
    pub intercept: bool,
}

pub(crate) fn augment(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        crate::linalg::with_intercept(x)
    } else {
        x.clone()
    }
}

pub(crate) fn cholesky_with_jitter(q: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, BayesError> {
    if let Some(c) = Cholesky::new(q.clone()) {
        return Ok(c);
    }
    let p = q.nrows();
    Cholesky::new(q + DMatrix::identity(p, p) * JITTER).ok_or_else(|| {
        BayesError::NumericalFailure("posterior precision is not positive definite".into())
    })
}

/// `Sigma = (X~'X~ / sigma2 + Omega^-1)^-1`, `mu = Sigma X~'y / sigma2`, with
/// `X~ = [X, 1]` and `Omega = diag(c, ..., c, intercept_sd^2)`.
pub fn fit_blr_conjugate(
    x: &DMatrix<f64>,
    y: &[f64],
    config: &ConjugateConfig,
) -> Result<GaussianPosterior, BayesError> {
    check_xy(x, y)?;
    for (name, v) in [("c", config.c), ("sigma2", config.sigma2), ("intercept_sd", config.intercept_sd)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(BayesError::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    let xt = augment(x, config.intercept);
    let p = xt.ncols();
    let mut prior_prec = DVector::from_element(p, 1.0 / config.c);
    if config.intercept {
        prior_prec[p - 1] = 1.0 / (config.intercept_sd * config.intercept_sd);
    }
    let q = xt.transpose() * &xt / config.sigma2 + DMatrix::from_diagonal(&prior_prec);
    let chol = cholesky_with_jitter(q)?;
    let rhs = xt.transpose() * DVector::from_column_slice(y) / config.sigma2;
    let mean = chol.solve(&rhs);
    let inv = chol.inverse();
    let cov = (&inv + inv.transpose()) * 0.5;
    Ok(GaussianPosterior {
        mean: mean.as_slice().to_vec(),
        cov,
        sigma2: config.sigma2,
        intercept: config.intercept,
    })
}

/// Conjugate posterior over standardized features, carrying the column
/// statistics it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedPosterior {
    pub standardization: Standardizer,
    pub posterior: GaussianPosterior,
}

impl StandardizedPosterior {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<PredictiveDistribution>, BayesError> {
        if x.ncols() != self.standardization.dim() {
            return Err(BayesError::DimensionMismatch(format!(
                "posterior has {} features, input has {}",
                self.standardization.dim(),
                x.ncols()
            )));
        }
        self.posterior.predict(&self.standardization.apply(x))
    }
}

/// Conjugate fit on column-standardized `x` with a plug-in noise variance:
/// the out-of-fold MSE of a ridge CV over the default grid with
/// `inner_folds` folds (capped at n). Falls back to the target variance
/// when that MSE is zero.
pub fn fit_blr_conjugate_plugin(
    x: &DMatrix<f64>,
    y: &[f64],
    c: f64,
    intercept_sd: f64,
    inner_folds: usize,
    seed: u64,
) -> Result<StandardizedPosterior, BayesError> {
    check_xy(x, y)?;
    let standardization = Standardizer::fit(x);
    let z = standardization.apply(x);
    let k = inner_folds.min(y.len());
    let (_, rep) = fit_ridge_cv(&z, y, &default_alpha_grid(), k, seed, &RidgeOptions::default())?;
    let sigma2 = if rep.oof_mse > 0.0 { rep.oof_mse } else { sample_variance(y).max(1e-12) };
    let config = ConjugateConfig { c, sigma2, intercept: true, intercept_sd };
    Ok(StandardizedPosterior { posterior: fit_blr_conjugate(&z, y, &config)?, standardization })
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len() - usize::from(self.intercept)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<PredictiveDistribution>, BayesError> {
        if x.ncols() != self.dim() {
            return Err(BayesError::DimensionMismatch(format!(
                "posterior has {} features, input has {}",
                self.dim(),
                x.ncols()
            )));
        }
        let xt = augment(x, self.intercept);
        let mu = DVector::from_column_slice(&self.mean);
        Ok(xt
            .row_iter()
            .map(|row| {
                let r = row.transpose();
                let mean = r.dot(&mu);
                let var = (&self.cov * &r).dot(&r) + self.sigma2;
                PredictiveDistribution::Gaussian { mean, var }
            })
            .collect())
    }
}
