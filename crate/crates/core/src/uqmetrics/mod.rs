//! Scoring rules for predictive distributions and the cross-validation
//! harness that produces method comparison reports.
//!
//! NLL follows the training objective of the heteroscedastic model and
//! leaves out `log(2 pi) / 2`; sample predictives are moment-matched to a
//! Gaussian first.

mod harness;

pub use harness::{
    evaluate_pipeline, report_csv_bytes, write_report_csv, write_report_json, EvalConfig, HarnessData, MaeRow, MethodSpec, ScoreReport,
    UqRow, ViewSubset, NLL_CONVENTION, REPORT_SCHEMA,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::dist::PredictiveDistribution;

/// Fewest draws accepted for a sample-based interval.
pub const MIN_INTERVAL_SAMPLES: usize = 20;

#[derive(Debug, Error)]
pub enum UqError {
    #[error("{got} samples, need at least {needed}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {0} predictives, {1} targets")]
    LengthMismatch(usize, usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("empty input")]
    Empty,
    #[error("fold {fold}, {method} on {views}: {message}")]
    Stage {
        fold: usize,
        method: String,
        views: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn check_alpha(alpha: f64) -> Result<(), UqError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(UqError::InvalidAlpha(alpha))
    }
}

/// Type-7 quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Central `alpha` interval.
pub fn interval(dist: &PredictiveDistribution, alpha: f64) -> Result<(f64, f64), UqError> {
    check_alpha(alpha)?;
    match dist {
        PredictiveDistribution::Gaussian { mean, var } => {
            let z = Normal::standard().inverse_cdf((1.0 + alpha) / 2.0);
            let half = z * var.sqrt();
            Ok((mean - half, mean + half))
        }
        PredictiveDistribution::Samples { values } => {
            if values.len() < MIN_INTERVAL_SAMPLES {
                return Err(UqError::TooFewSamples {
                    needed: MIN_INTERVAL_SAMPLES,
                    got: values.len(),
                });
            }
            let s = sorted(values);
            Ok((
                quantile_sorted(&s, (1.0 - alpha) / 2.0),
                quantile_sorted(&s, (1.0 + alpha) / 2.0),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub alpha: f64,
    pub mean_length: f64,
    pub coverage: f64,
    pub n: usize,
}

fn check_lengths(dists: &[PredictiveDistribution], y: &[f64]) -> Result<(), UqError> {
    if dists.len() != y.len() {
        return Err(UqError::LengthMismatch(dists.len(), y.len()));
    }
    if dists.is_empty() {
        return Err(UqError::Empty);
    }
    Ok(())
}

/// Mean interval length and the fraction of targets inside their closed
/// interval.
pub fn coverage_and_length(
    dists: &[PredictiveDistribution],
    y: &[f64],
    alpha: f64,
) -> Result<IntervalReport, UqError> {
    check_lengths(dists, y)?;
    let mut covered = 0usize;
    let mut length = 0.0;
    for (d, &t) in dists.iter().zip(y) {
        let (lo, hi) = interval(d, alpha)?;
        length += hi - lo;
        if lo <= t && t <= hi {
            covered += 1;
        }
    }
    let n = y.len();
    Ok(IntervalReport {
        alpha,
        mean_length: length / n as f64,
        coverage: covered as f64 / n as f64,
        n,
    })
}

/// Mean of `(y - mu)^2 / (2 var) + log(var) / 2`.
pub fn eval_nll(dists: &[PredictiveDistribution], y: &[f64]) -> Result<f64, UqError> {
    check_lengths(dists, y)?;
    let mut total = 0.0;
    for (d, &t) in dists.iter().zip(y) {
        let (mu, var) = match d {
            PredictiveDistribution::Gaussian { mean, var } => (*mean, *var),
            PredictiveDistribution::Samples { values } if values.len() < 2 => {
                return Err(UqError::TooFewSamples { needed: 2, got: values.len() })
            }
            PredictiveDistribution::Samples { .. } => (d.mean(), d.variance()),
        };
        total += (t - mu).powi(2) / (2.0 * var) + 0.5 * var.ln();
    }
    Ok(total / y.len() as f64)
}

/// Closed-form CRPS of `N(mu, sigma^2)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> f64 {
    if sigma == 0.0 {
        return (y - mu).abs();
    }
    let n = Normal::standard();
    let z = (y - mu) / sigma;
    sigma * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

/// `mean|X - y| - mean|X - X'| / 2` over all ordered pairs, in
/// `O(m log m)` after sorting.
pub fn crps_samples(values: &[f64], y: f64) -> Result<f64, UqError> {
    let m = values.len();
    if m < 2 {
        return Err(UqError::TooFewSamples { needed: 2, got: m });
    }
    let s = sorted(values);
    let mf = m as f64;
    let to_y = s.iter().map(|x| (x - y).abs()).sum::<f64>() / mf;
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - m + 1) x_(i)
    let pairs: f64 = s
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - mf + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok(to_y - pairs / (2.0 * mf * mf))
}

pub fn crps(dist: &PredictiveDistribution, y: f64) -> Result<f64, UqError> {
    match dist {
        PredictiveDistribution::Gaussian { mean, var } => Ok(crps_gaussian(*mean, var.sqrt(), y)),
        PredictiveDistribution::Samples { values } => crps_samples(values, y),
    }
}

pub fn mean_crps(dists: &[PredictiveDistribution], y: &[f64]) -> Result<f64, UqError> {
    check_lengths(dists, y)?;
    let mut total = 0.0;
    for (d, &t) in dists.iter().zip(y) {
        total += crps(d, t)?;
    }
    Ok(total / y.len() as f64)
}
