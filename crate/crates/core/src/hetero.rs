//! Heteroscedastic Gaussian regression: linear heads for the mean and the
//! log-variance, fitted by minimizing the Gaussian negative log-likelihood
//!
//! ```text
//! L = (1/n) sum_i [ (y_i - mu_i)^2 / (2 s2_i) + log(s2_i) / 2 ]
//! ```
//!
//! (the constant `log(2 pi) / 2` is left out). The model captures noise that
//! varies with the input; it has no notion of parameter uncertainty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::PredictiveDistribution;
use crate::linalg::Standardizer;
use crate::regress::{fit_ridge, RegressError};

/// Smallest variance the model will emit.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HeteroError {
    #[error("non-positive variance {0}")]
    NonPositiveVariance(f64),
    #[error("optimization diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// One summand of the training objective.
pub fn nll(y: f64, mu: f64, var: f64) -> Result<f64, HeteroError> {
    if !(var > 0.0) {
        return Err(HeteroError::NonPositiveVariance(var));
    }
    Ok((y - mu).powi(2) / (2.0 * var) + 0.5 * var.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many epochs without improvement.
    pub patience: usize,
    /// Keep the log-variance head at its intercept (homoscedastic model).
    pub constant_variance: bool,
}

impl Default for HeteroConfig {
    fn default() -> Self {
        HeteroConfig {
            lr: 1e-2,
            epochs: 2000,
            patience: 50,
            constant_variance: false,
        }
    }
}

/// `mu(x) = z' w_mu + b_mu`, `log s2(x) = z' w_s + b_s`, where `z` is `x`
/// after the stored standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroModel {
    pub w_mu: Vec<f64>,
    pub b_mu: f64,
    pub w_s: Vec<f64>,
    pub b_s: f64,
    pub standardization: Standardizer,
    pub train_nll: f64,
    pub epochs_run: usize,
}

/// Parameter layout used by [`loss_and_gradient`]:
/// `[w_mu (d), b_mu, w_s (d), b_s]`.
pub fn pack(w_mu: &[f64], b_mu: f64, w_s: &[f64], b_s: f64) -> Vec<f64> {
    let mut theta = Vec::with_capacity(2 * w_mu.len() + 2);
    theta.extend_from_slice(w_mu);
    theta.push(b_mu);
    theta.extend_from_slice(w_s);
    theta.push(b_s);
    theta
}

fn heads(z: &DMatrix<f64>, theta: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let d = z.ncols();
    let mu = z * DVector::from_column_slice(&theta[..d]) + DVector::from_element(z.nrows(), theta[d]);
    let s = z * DVector::from_column_slice(&theta[d + 1..2 * d + 1])
        + DVector::from_element(z.nrows(), theta[2 * d + 1]);
    (mu, s)
}

/// Mean objective and its analytic gradient at `theta` on already
/// standardized features. Log-variances below the floor are clamped, which
/// zeroes their gradient.
pub fn loss_and_gradient(z: &DMatrix<f64>, y: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let (n, d) = z.shape();
    assert_eq!(theta.len(), 2 * d + 2, "parameter vector has the wrong length");
    let (mu, s) = heads(z, theta);
    let floor = VARIANCE_FLOOR.ln();
    let nf = n as f64;
    let mut loss = 0.0;
    let mut g_mu = DVector::zeros(n);
    let mut g_s = DVector::zeros(n);
    for i in 0..n {
        let si = s[i].max(floor);
        let inv = (-si).exp();
        let r = y[i] - mu[i];
        loss += 0.5 * r * r * inv + 0.5 * si;
        g_mu[i] = -r * inv / nf;
        g_s[i] = if s[i] >= floor { 0.5 * (1.0 - r * r * inv) / nf } else { 0.0 };
    }
    let gw_mu = z.transpose() * &g_mu;
    let gw_s = z.transpose() * &g_s;
    let grad = pack(gw_mu.as_slice(), g_mu.sum(), gw_s.as_slice(), g_s.sum());
    (loss / nf, grad)
}

/// Full-batch gradient descent with step-size control: a step that does not
/// lower the objective is undone and the rate halved, an accepted step grows
/// the rate by 20%. Starts from an `alpha = 1` ridge fit for the mean and the
/// log of its residual variance, and returns the best parameters seen.
pub fn fit_hetero(x: &DMatrix<f64>, y: &[f64], config: &HeteroConfig) -> Result<HeteroModel, HeteroError> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(HeteroError::DimensionMismatch(format!("{n} rows but {} targets", y.len())));
    }
    if n < 2 {
        return Err(HeteroError::InvalidArgument(format!("need at least 2 rows, got {n}")));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(HeteroError::InvalidArgument(format!("lr must be positive, got {}", config.lr)));
    }
    if n < d {
        log::warn!("heteroscedastic fit with fewer rows ({n}) than features ({d})");
    }
    let standardization = Standardizer::fit(x);
    let z = standardization.apply(x);

    let warm = fit_ridge(&z, y, 1.0)?;
    let pred = warm.predict(&z)?;
    let resid_var = pred.iter().zip(y).map(|(p, t)| (t - p).powi(2)).sum::<f64>() / n as f64;
    let mut theta = pack(&warm.weights, warm.intercept, &vec![0.0; d], resid_var.max(VARIANCE_FLOOR).ln());

    let (mut loss, mut grad) = loss_and_gradient(&z, y, &theta);
    if !loss.is_finite() {
        return Err(HeteroError::Diverged { epoch: 0 });
    }
    let mask_variance = |g: &mut [f64]| {
        if config.constant_variance {
            g[d + 1..2 * d + 1].iter_mut().for_each(|v| *v = 0.0);
        }
    };
    mask_variance(&mut grad);
    let mut lr = config.lr;
    let mut stagnant = 0;
    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - lr * g).collect();
        let (trial_loss, mut trial_grad) = loss_and_gradient(&z, y, &trial);
        let improved = trial_loss.is_finite() && trial_loss < loss;
        if improved {
            let gain = loss - trial_loss;
            mask_variance(&mut trial_grad);
            theta = trial;
            grad = trial_grad;
            loss = trial_loss;
            lr *= 1.2;
            stagnant = if gain > 1e-13 * loss.abs().max(1.0) { 0 } else { stagnant + 1 };
        } else {
            lr *= 0.5;
            stagnant += 1;
            if lr < 1e-300 {
                return Err(HeteroError::Diverged { epoch });
            }
        }
        if stagnant >= config.patience {
            break;
        }
    }

    let (_, s) = heads(&z, &theta);
    let min_s = s.min();
    if min_s < VARIANCE_FLOOR.ln() {
        log::warn!(
            "predicted variance collapsed to {:e} on training rows; flooring at {VARIANCE_FLOOR:e}",
            min_s.exp()
        );
    }
    Ok(HeteroModel {
        w_mu: theta[..d].to_vec(),
        b_mu: theta[d],
        w_s: theta[d + 1..2 * d + 1].to_vec(),
        b_s: theta[2 * d + 1],
        standardization,
        train_nll: loss,
        epochs_run,
    })
}

impl HeteroModel {
    fn theta(&self) -> Vec<f64> {
        pack(&self.w_mu, self.b_mu, &self.w_s, self.b_s)
    }

    /// Mean and (floored) variance per row.
    pub fn moments(&self, x: &DMatrix<f64>) -> Result<Vec<(f64, f64)>, HeteroError> {
        if x.ncols() != self.w_mu.len() {
            return Err(HeteroError::DimensionMismatch(format!(
                "model has {} features, input has {}",
                self.w_mu.len(),
                x.ncols()
            )));
        }
        let z = self.standardization.apply(x);
        let (mu, s) = heads(&z, &self.theta());
        Ok(mu
            .iter()
            .zip(s.iter())
            .map(|(m, s)| (*m, s.exp().max(VARIANCE_FLOOR)))
            .collect())
    }
}

pub fn predict_hetero(model: &HeteroModel, x: &DMatrix<f64>) -> Result<Vec<PredictiveDistribution>, HeteroError> {
    Ok(model
        .moments(x)?
        .into_iter()
        .map(|(m, v)| PredictiveDistribution::Gaussian { mean: m, var: v })
        .collect())
}
