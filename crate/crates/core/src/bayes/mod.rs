//! Bayesian linear regression `y = x'w + b + e`, `e ~ N(0, sigma^2)`.
//!
//! Two paths are provided:
//!
//! * a conjugate Gaussian posterior for a Gaussian prior and known noise;
//! * a Gibbs sampler for Gaussian-ridge, half-Student-t and regularized
//!   horseshoe priors with a flat prior on `sigma`, whose half-t scales are
//!   written as inverse-gamma mixtures so that every conditional is standard.

mod conjugate;
mod diagnostics;
mod gibbs;
mod io;

pub use conjugate::{
    fit_blr_conjugate, fit_blr_conjugate_plugin, ConjugateConfig, GaussianPosterior, StandardizedPosterior,
};
pub use diagnostics::{
    diagnostics, ess_bulk, ess_mean, split_rhat, DiagnosticsReport, ParameterDiagnostics, RHAT_THRESHOLD,
};
pub use gibbs::{fit_blr_mcmc, McmcConfig, PosteriorDraws};
pub use io::{read_posterior, write_posterior, PosteriorLayout};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::dist::PredictiveDistribution;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("chain {chain} produced a non-finite draw at iteration {iteration}")]
    DivergentChain { chain: usize, iteration: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("posterior sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Regress(#[from] crate::regress::RegressError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// `w_j ~ N(0, c)`.
    GaussianRidge { c: f64 },
    /// `w_j ~ N(0, lambda_j^2 tau^2)`, `lambda_j ~ t_nu+(0, 1)`,
    /// `tau ~ Cauchy+(0, 1)`.
    HalfT { nu: f64 },
    /// Half-t local scales with a Gaussian slab of scale `slab_scale`.
    RegularizedHorseshoe { nu: f64, slab_scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlrPriorConfig {
    pub kind: PriorKind,
    pub intercept_sd: f64,
}

impl Default for BlrPriorConfig {
    fn default() -> Self {
        BlrPriorConfig {
            kind: PriorKind::HalfT { nu: 3.0 },
            intercept_sd: 5.0,
        }
    }
}

impl BlrPriorConfig {
    pub fn validate(&self) -> Result<(), BayesError> {
        let bad = |msg: String| Err(BayesError::InvalidArgument(msg));
        if !(self.intercept_sd > 0.0 && self.intercept_sd.is_finite()) {
            return bad(format!("intercept_sd must be positive, got {}", self.intercept_sd));
        }
        match self.kind {
            PriorKind::GaussianRidge { c } if !(c > 0.0 && c.is_finite()) => {
                bad(format!("c must be positive, got {c}"))
            }
            PriorKind::HalfT { nu } | PriorKind::RegularizedHorseshoe { nu, .. } if !(nu >= 1.0 && nu.is_finite()) => {
                bad(format!("nu must be >= 1, got {nu}"))
            }
            PriorKind::RegularizedHorseshoe { slab_scale, .. } if !(slab_scale > 0.0 && slab_scale.is_finite()) => {
                bad(format!("slab_scale must be positive, got {slab_scale}"))
            }
            _ => Ok(()),
        }
    }
}

/// Either posterior representation.
pub enum Posterior<'a> {
    Gaussian(&'a GaussianPosterior),
    Draws(&'a PosteriorDraws),
}

/// Posterior predictive per row of `x`. The Gaussian path returns
/// `N(x~'mu, x~' Sigma x~ + sigma^2)`; the sampled path returns one
/// `x~'w~ + sigma * eps` draw per kept posterior draw.
pub fn predict_blr(
    posterior: Posterior<'_>,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<Vec<PredictiveDistribution>, BayesError> {
    match posterior {
        Posterior::Gaussian(g) => g.predict(x),
        Posterior::Draws(d) => d.predict(x, seed),
    }
}

fn check_xy(x: &DMatrix<f64>, y: &[f64]) -> Result<(), BayesError> {
    if x.nrows() != y.len() {
        return Err(BayesError::DimensionMismatch(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(BayesError::InvalidArgument("non-finite input".into()));
    }
    Ok(())
}
