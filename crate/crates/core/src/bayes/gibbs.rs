use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conjugate::{augment, cholesky_with_jitter};
use super::{check_xy, BayesError, BlrPriorConfig, PriorKind};
use crate::dist::PredictiveDistribution;
use crate::linalg::{derive_seed, rng_from_seed, sample_variance, Standardizer};

/// Local and global scales are kept inside this range so that prior
/// precisions stay representable.
const SCALE_MIN: f64 = 1e-150;
const SCALE_MAX: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    /// Iterations per chain, warm-up included.
    pub draws: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Sample on standardized features and map draws back to the raw scale.
    pub standardize: bool,
    pub intercept: bool,
    /// Hold every local and global scale at 1.
    pub pin_scales: bool,
    /// Known noise variance instead of sampling it.
    pub fixed_sigma2: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 4,
            draws: 1500,
            warmup: 500,
            seed: 0,
            standardize: true,
            intercept: true,
            pin_scales: false,
            fixed_sigma2: None,
        }
    }
}

/// Kept draws, chain-major. Coefficients are on the raw feature scale, with
/// the intercept last (zero when the model has none).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub chains: usize,
    pub draws_per_chain: usize,
    pub warmup: usize,
    pub d: usize,
    pub intercept: bool,
    pub prior: BlrPriorConfig,
    pub sampled_scales: bool,
    pub sampled_sigma: bool,
    /// `chains * kept * (d + 1)`.
    pub coefs: Vec<f64>,
    /// `chains * kept`.
    pub sigma: Vec<f64>,
    /// `chains * kept`.
    pub tau: Vec<f64>,
    /// `chains * kept * d`.
    pub lambda: Vec<f64>,
}

fn inv_gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    rate / g
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

struct Problem<'a> {
    xt: DMatrix<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    y: &'a [f64],
    d: usize,
    prior: BlrPriorConfig,
    config: McmcConfig,
}

struct ChainOut {
    coefs: Vec<f64>,
    sigma: Vec<f64>,
    tau: Vec<f64>,
    lambda: Vec<f64>,
}

impl Problem<'_> {
    fn sampled_scales(&self) -> bool {
        !self.config.pin_scales && !matches!(self.prior.kind, PriorKind::GaussianRidge { .. })
    }

    fn prior_variances(&self, lambda2: &[f64], tau2: f64) -> DVector<f64> {
        let p = self.xt.ncols();
        let mut v = DVector::from_element(p, self.prior.intercept_sd.powi(2));
        for j in 0..self.d {
            v[j] = match self.prior.kind {
                PriorKind::GaussianRidge { c } => c,
                PriorKind::HalfT { .. } => tau2 * lambda2[j],
                PriorKind::RegularizedHorseshoe { slab_scale, .. } => {
                    let s2 = slab_scale * slab_scale;
                    let tl = tau2 * lambda2[j];
                    s2 * tl / (s2 + tl)
                }
            };
        }
        v
    }

    /// Draw from `N(Q^-1 X~'y / s2, Q^-1)`, `Q = X~'X~ / s2 + diag(1 / v)`.
    fn sample_coefs(
        &self,
        rng: &mut ChaCha8Rng,
        v: &DVector<f64>,
        sigma2: f64,
    ) -> Result<DVector<f64>, BayesError> {
        let (n, p) = self.xt.shape();
        if p <= n {
            let q = &self.xtx / sigma2 + DMatrix::from_diagonal(&v.map(|x| 1.0 / x));
            let chol = cholesky_with_jitter(q)?;
            let mean = chol.solve(&(&self.xty / sigma2));
            let z = normals(rng, p);
            let dev = chol
                .l()
                .tr_solve_lower_triangular(&z)
                .ok_or_else(|| BayesError::NumericalFailure("triangular solve failed".into()))?;
            Ok(mean + dev)
        } else {
            // Bhattacharya et al. (2016): O(n^2 p) when p > n.
            let s = sigma2.sqrt();
            let phi = &self.xt / s;
            let alpha = DVector::from_iterator(n, self.y.iter().map(|t| t / s));
            let u = normals(rng, p).component_mul(&v.map(f64::sqrt));
            let delta = normals(rng, n);
            let vv = &phi * &u + delta;
            let phi_d = DMatrix::from_fn(n, p, |i, j| phi[(i, j)] * v[j]);
            let m = &phi_d * phi.transpose() + DMatrix::identity(n, n);
            let chol = cholesky_with_jitter(m)?;
            let w = chol.solve(&(alpha - vv));
            Ok(u + phi_d.transpose() * w)
        }
    }

    fn run_chain(&self, chain: usize, seed: u64) -> Result<ChainOut, BayesError> {
        let mut rng = rng_from_seed(seed);
        let cfg = &self.config;
        let (n, d) = (self.xt.nrows(), self.d);
        let nu = match self.prior.kind {
            PriorKind::HalfT { nu } | PriorKind::RegularizedHorseshoe { nu, .. } => nu,
            PriorKind::GaussianRidge { .. } => 1.0,
        };
        let y_var = sample_variance(self.y);
        let mut sigma2 = cfg
            .fixed_sigma2
            .unwrap_or(if y_var > 0.0 { y_var } else { 1.0 });
        let mut lambda2 = vec![1.0; d];
        let mut aux = vec![1.0; d];
        let mut tau2 = 1.0;
        let mut xi = 1.0;
        let kept = cfg.draws - cfg.warmup;
        let mut out = ChainOut {
            coefs: Vec::with_capacity(kept * (d + 1)),
            sigma: Vec::with_capacity(kept),
            tau: Vec::with_capacity(kept),
            lambda: Vec::with_capacity(kept * d),
        };
        for it in 0..cfg.draws {
            let v = self.prior_variances(&lambda2, tau2);
            let w = self.sample_coefs(&mut rng, &v, sigma2)?;

            if cfg.fixed_sigma2.is_none() {
                let resid = DVector::from_column_slice(self.y) - &self.xt * &w;
                sigma2 = inv_gamma(&mut rng, (n as f64 - 1.0) / 2.0, resid.norm_squared() / 2.0);
            }

            if self.sampled_scales() {
                let half = (nu + 1.0) / 2.0;
                for j in 0..d {
                    let l2 = inv_gamma(&mut rng, half, nu / aux[j] + w[j] * w[j] / (2.0 * tau2));
                    lambda2[j] = l2.clamp(SCALE_MIN, SCALE_MAX);
                    aux[j] = inv_gamma(&mut rng, half, 1.0 + nu / lambda2[j]);
                }
                let ss: f64 = (0..d).map(|j| w[j] * w[j] / (2.0 * lambda2[j])).sum();
                tau2 = inv_gamma(&mut rng, (d as f64 + 1.0) / 2.0, 1.0 / xi + ss).clamp(SCALE_MIN, SCALE_MAX);
                xi = inv_gamma(&mut rng, 1.0, 1.0 + 1.0 / tau2);
            }

            if !(w.iter().all(|v| v.is_finite()) && sigma2.is_finite() && sigma2 > 0.0) {
                return Err(BayesError::DivergentChain { chain, iteration: it });
            }
            if it >= cfg.warmup {
                out.coefs.extend(w.iter().take(d));
                out.coefs.push(if cfg.intercept { w[d] } else { 0.0 });
                out.sigma.push(sigma2.sqrt());
                out.tau.push(tau2.sqrt());
                out.lambda.extend(lambda2.iter().map(|l| l.sqrt()));
            }
        }
        Ok(out)
    }
}

/// Gibbs sampler over `(w, b, sigma^2, lambda, a, tau^2, xi)`.
///
/// Half-t local scales use `lambda^2 | a ~ IG(nu/2, nu/a)`,
/// `a ~ IG(1/2, 1)`, and the half-Cauchy global scale the same construction
/// with `nu = 1`. The regularized horseshoe multiplies the weight prior by a
/// `N(0, slab^2)` slab, giving prior variance
/// `slab^2 tau^2 lambda^2 / (slab^2 + tau^2 lambda^2)` while leaving the
/// scale conditionals unchanged. The flat prior on `sigma` gives
/// `sigma^2 | . ~ IG((n - 1)/2, RSS/2)`.
pub fn fit_blr_mcmc(
    x: &DMatrix<f64>,
    y: &[f64],
    prior: &BlrPriorConfig,
    config: &McmcConfig,
) -> Result<PosteriorDraws, BayesError> {
    check_xy(x, y)?;
    prior.validate()?;
    let (n, d) = x.shape();
    if n < 3 {
        return Err(BayesError::InvalidArgument(format!("need at least 3 rows, got {n}")));
    }
    if config.chains == 0 || config.draws <= config.warmup {
        return Err(BayesError::InvalidArgument(format!(
            "need chains >= 1 and draws > warmup, got {} chains, {} draws, {} warmup",
            config.chains, config.draws, config.warmup
        )));
    }
    if let Some(s2) = config.fixed_sigma2 {
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(BayesError::InvalidArgument(format!("fixed sigma^2 must be positive, got {s2}")));
        }
    }
    let mut standardizer = if config.standardize {
        Standardizer::fit(x)
    } else {
        Standardizer::identity(d)
    };
    if !config.intercept {
        standardizer.means.iter_mut().for_each(|m| *m = 0.0);
    }
    let xt = augment(&standardizer.apply(x), config.intercept);
    let problem = Problem {
        xtx: xt.transpose() * &xt,
        xty: xt.transpose() * DVector::from_column_slice(y),
        xt,
        y,
        d,
        prior: *prior,
        config: *config,
    };
    let outs: Vec<ChainOut> = (0..config.chains)
        .into_par_iter()
        .map(|c| problem.run_chain(c, derive_seed(config.seed, c as u64)))
        .collect::<Result<_, _>>()?;

    let mut draws = PosteriorDraws {
        chains: config.chains,
        draws_per_chain: config.draws,
        warmup: config.warmup,
        d,
        intercept: config.intercept,
        prior: *prior,
        sampled_scales: problem.sampled_scales(),
        sampled_sigma: config.fixed_sigma2.is_none(),
        coefs: Vec::new(),
        sigma: Vec::new(),
        tau: Vec::new(),
        lambda: Vec::new(),
    };
    for out in outs {
        for row in out.coefs.chunks(d + 1) {
            let (w, b) = standardizer.unscale_coefficients(&row[..d], row[d]);
            draws.coefs.extend(w);
            draws.coefs.push(if config.intercept { b } else { 0.0 });
        }
        draws.sigma.extend(out.sigma);
        draws.tau.extend(out.tau);
        draws.lambda.extend(out.lambda);
    }
    Ok(draws)
}

impl PosteriorDraws {
    pub fn kept(&self) -> usize {
        self.draws_per_chain - self.warmup
    }

    pub fn total(&self) -> usize {
        self.chains * self.kept()
    }

    /// Coefficient `j` (`j == d` is the intercept) of pooled draw `s`.
    pub fn coef(&self, s: usize, j: usize) -> f64 {
        self.coefs[s * (self.d + 1) + j]
    }

    pub fn coef_column(&self, j: usize) -> Vec<f64> {
        (0..self.total()).map(|s| self.coef(s, j)).collect()
    }

    fn split(&self, pooled: Vec<f64>) -> Vec<Vec<f64>> {
        pooled.chunks(self.kept()).map(<[f64]>::to_vec).collect()
    }

    pub fn coef_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.split(self.coef_column(j))
    }

    pub fn sigma_chains(&self) -> Vec<Vec<f64>> {
        self.split(self.sigma.clone())
    }

    pub fn tau_chains(&self) -> Vec<Vec<f64>> {
        self.split(self.tau.clone())
    }

    pub fn lambda_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.split((0..self.total()).map(|s| self.lambda[s * self.d + j]).collect())
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        (0..=self.d)
            .map(|j| self.coef_column(j).iter().sum::<f64>() / self.total() as f64)
            .collect()
    }

    /// One predictive draw `x~'w~ + sigma * eps` per pooled posterior draw.
    pub fn predict(&self, x: &DMatrix<f64>, seed: u64) -> Result<Vec<PredictiveDistribution>, BayesError> {
        if x.ncols() != self.d {
            return Err(BayesError::DimensionMismatch(format!(
                "posterior has {} features, input has {}",
                self.d,
                x.ncols()
            )));
        }
        let w = DMatrix::from_row_slice(self.total(), self.d + 1, &self.coefs);
        let means = crate::linalg::with_intercept(x) * w.transpose();
        let mut rng = rng_from_seed(seed);
        means
            .row_iter()
            .map(|row| {
                let values: Vec<f64> = row
                    .iter()
                    .zip(&self.sigma)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                PredictiveDistribution::samples(values).map_err(|_| {
                    BayesError::NumericalFailure("non-finite predictive draw".into())
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{fit_blr_conjugate, ConjugateConfig};

    fn data(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| 1.0 + 0.8 * x[(i, 0)] + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    fn small_config() -> McmcConfig {
        McmcConfig {
            chains: 2,
            draws: 400,
            warmup: 100,
            seed: 11,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = data(30, 3, 1);
        let a = fit_blr_mcmc(&x, &y, &BlrPriorConfig::default(), &small_config()).unwrap();
        let b = fit_blr_mcmc(&x, &y, &BlrPriorConfig::default(), &small_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coefs.len(), 2 * 300 * 4);
        assert!(a.sigma.iter().chain(&a.tau).chain(&a.lambda).all(|v| *v > 0.0));
    }

    #[test]
    fn pinned_scales_match_conjugate_moments() {
        let (x, y) = data(10, 2, 2);
        let cfg = McmcConfig {
            chains: 4,
            draws: 3000,
            warmup: 200,
            seed: 5,
            standardize: false,
            pin_scales: true,
            fixed_sigma2: Some(0.5),
            ..McmcConfig::default()
        };
        let draws = fit_blr_mcmc(&x, &y, &BlrPriorConfig::default(), &cfg).unwrap();
        let conj = fit_blr_conjugate(
            &x,
            &y,
            &ConjugateConfig { c: 1.0, sigma2: 0.5, intercept: true, intercept_sd: 5.0 },
        )
        .unwrap();
        for j in 0..3 {
            let col = draws.coef_column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            // exact conditional draws are independent across iterations
            let se = (conj.cov[(j, j)] / col.len() as f64).sqrt();
            assert!((m - conj.mean[j]).abs() < 4.0 * se, "coef {j}: {m} vs {}", conj.mean[j]);
            let v = sample_variance(&col);
            assert!((v / conj.cov[(j, j)] - 1.0).abs() < 0.1, "coef {j}: var {v} vs {}", conj.cov[(j, j)]);
        }
    }

    #[test]
    fn wide_design_uses_fast_sampler() {
        // p > n: the Bhattacharya path must agree with the conjugate moments
        let (x, y) = data(5, 8, 3);
        let cfg = McmcConfig {
            chains: 2,
            draws: 4000,
            warmup: 10,
            seed: 1,
            standardize: false,
            pin_scales: true,
            fixed_sigma2: Some(1.0),
            ..McmcConfig::default()
        };
        let draws = fit_blr_mcmc(&x, &y, &BlrPriorConfig::default(), &cfg).unwrap();
        let conj = fit_blr_conjugate(&x, &y, &ConjugateConfig::default()).unwrap();
        for j in 0..9 {
            let col = draws.coef_column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let se = (conj.cov[(j, j)] / col.len() as f64).sqrt();
            assert!((m - conj.mean[j]).abs() < 4.0 * se, "coef {j}");
        }
    }

    #[test]
    fn standardization_maps_back_to_raw_scale() {
        let (x, y) = data(60, 2, 4);
        let shifted = x.map(|v| 100.0 + 10.0 * v);
        let prior = BlrPriorConfig { kind: PriorKind::GaussianRidge { c: 1e6 }, intercept_sd: 1e3 };
        let draws = fit_blr_mcmc(&shifted, &y, &prior, &small_config()).unwrap();
        let ridge = crate::regress::fit_ridge(&shifted, &y, 0.0).unwrap();
        let mean = draws.posterior_mean();
        assert!((mean[0] - ridge.weights[0]).abs() < 0.01);
        assert!((mean[2] - ridge.intercept).abs() < 1.0);
        let p = draws.predict(&shifted.rows(0, 1).into_owned(), 0).unwrap();
        assert!((p[0].mean() - ridge.predict(&shifted.rows(0, 1).into_owned()).unwrap()[0]).abs() < 0.2);
    }

    #[test]
    fn horseshoe_variants_run() {
        let (x, y) = data(40, 6, 5);
        for kind in [
            PriorKind::HalfT { nu: 3.0 },
            PriorKind::RegularizedHorseshoe { nu: 3.0, slab_scale: 2.0 },
            PriorKind::GaussianRidge { c: 1.0 },
        ] {
            let prior = BlrPriorConfig { kind, intercept_sd: 5.0 };
            let draws = fit_blr_mcmc(&x, &y, &prior, &small_config()).unwrap();
            let m = draws.posterior_mean();
            assert!((m[0] - 0.8).abs() < 0.3, "{kind:?}: {m:?}");
            assert_eq!(draws.sampled_scales, !matches!(kind, PriorKind::GaussianRidge { .. }));
        }
    }

    #[test]
    fn argument_checks() {
        let (x, y) = data(2, 1, 6);
        assert!(fit_blr_mcmc(&x, &y, &BlrPriorConfig::default(), &small_config()).is_err());
        let (x, y) = data(10, 1, 6);
        let bad = McmcConfig { warmup: 400, ..small_config() };
        assert!(fit_blr_mcmc(&x, &y, &BlrPriorConfig::default(), &bad).is_err());
        let prior = BlrPriorConfig { kind: PriorKind::HalfT { nu: 0.5 }, intercept_sd: 5.0 };
        assert!(fit_blr_mcmc(&x, &y, &prior, &small_config()).is_err());
    }
}
