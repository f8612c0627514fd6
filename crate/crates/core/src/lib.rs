//! Multi-view feature pipeline for multi-band satellite rasters with point and
//! probabilistic regressors and predictive-uncertainty scoring.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`raster`]: band rasters, normalization, 3-band view composition.
//! * [`featurize`]: per-view random convolutional features, FMX import,
//!   auxiliary linear head, fusion.
//! * [`regress`]: cross-validated ridge and the mean baseline.
//! * [`hetero`]: heteroscedastic Gaussian regression.
//! * [`bayes`]: Bayesian linear regression, conjugate and Gibbs-sampled.
//! * [`uqmetrics`]: interval coverage, NLL, CRPS and the K-fold harness.
//! * [`geoviz`]: variogram fitting and ordinary kriging onto grids.

pub mod bayes;
pub mod container;
pub mod dist;
pub mod featurize;
pub mod geoviz;
pub mod hetero;
pub mod linalg;
pub mod raster;
pub mod regress;
pub mod uqmetrics;

pub use nalgebra::{DMatrix, DVector};
