//! Predictive distributions emitted by the probabilistic regressors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("non-positive variance {0}")]
    NonPositiveVariance(f64),
    #[error("sample predictive has no draws")]
    EmptySamples,
    #[error("non-finite parameter")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictiveDistribution {
    Gaussian { mean: f64, var: f64 },
    /// Draws in sampling order.
    Samples { values: Vec<f64> },
}

impl PredictiveDistribution {
    pub fn gaussian(mean: f64, var: f64) -> Result<Self, DistError> {
        if !mean.is_finite() || !var.is_finite() {
            return Err(DistError::NonFinite);
        }
        if var <= 0.0 {
            return Err(DistError::NonPositiveVariance(var));
        }
        Ok(PredictiveDistribution::Gaussian { mean, var })
    }

    pub fn samples(values: Vec<f64>) -> Result<Self, DistError> {
        if values.is_empty() {
            return Err(DistError::EmptySamples);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DistError::NonFinite);
        }
        Ok(PredictiveDistribution::Samples { values })
    }

    pub fn mean(&self) -> f64 {
        match self {
            PredictiveDistribution::Gaussian { mean, .. } => *mean,
            PredictiveDistribution::Samples { values } => {
                values.iter().sum::<f64>() / values.len() as f64
            }
        }
    }

    /// Variance; for samples the unbiased (m - 1) estimate.
    pub fn variance(&self) -> f64 {
        match self {
            PredictiveDistribution::Gaussian { var, .. } => *var,
            PredictiveDistribution::Samples { values } => {
                crate::linalg::sample_variance(values)
            }
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, PredictiveDistribution::Gaussian { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_validate() {
        assert!(PredictiveDistribution::gaussian(0.0, 1.0).is_ok());
        assert_eq!(
            PredictiveDistribution::gaussian(0.0, 0.0),
            Err(DistError::NonPositiveVariance(0.0))
        );
        assert_eq!(PredictiveDistribution::samples(vec![]), Err(DistError::EmptySamples));
        assert_eq!(
            PredictiveDistribution::samples(vec![1.0, f64::NAN]),
            Err(DistError::NonFinite)
        );
    }

    #[test]
    fn sample_moments() {
        let d = PredictiveDistribution::samples(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.mean(), 2.5);
        assert!((d.variance() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn json_is_tagged() {
        let d = PredictiveDistribution::gaussian(1.0, 2.0).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"kind":"gaussian","mean":1.0,"var":2.0}"#);
    }
}
