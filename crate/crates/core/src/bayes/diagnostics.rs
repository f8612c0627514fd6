//! Convergence diagnostics: split-R-hat and effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::PosteriorDraws;

/// Split-R-hat above this value raises a warning.
pub const RHAT_THRESHOLD: f64 = 1.05;

fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            [&c[..half], &c[c.len() - half..]]
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(W, var_plus)` for equal-length chains.
fn variance_components(chains: &[&[f64]]) -> (f64, f64) {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let grand = mean(&means);
    let b_over_n = means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    (w, (n - 1.0) / n * w + b_over_n)
}

/// Split-R-hat: each chain is cut in two and the classic potential scale
/// reduction is computed over the halves. Constant input gives 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split_halves(chains);
    if halves.is_empty() || halves[0].len() < 2 {
        return f64::NAN;
    }
    let (w, var_plus) = variance_components(&halves);
    if w == 0.0 {
        return if var_plus == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt()
}

/// ESS of equal-length chains with Geyer's initial monotone sequence.
fn ess_of(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let (w, var_plus) = variance_components(chains);
    if w == 0.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |t: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - t).map(|i| (c[i] - mu) * (c[i + t] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let w_biased = w * (n as f64 - 1.0) / n as f64;
    let rho = |t: usize| 1.0 - (w_biased - acov(t)) / var_plus;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// ESS of the mean on the raw scale, over split chains.
pub fn ess_mean(chains: &[Vec<f64>]) -> f64 {
    let halves = split_halves(chains);
    let e = ess_of(&halves);
    if e.is_nan() {
        chains.len() as f64
    } else {
        e
    }
}

/// Bulk ESS: split chains, pooled ranks mapped through the normal quantile
/// function. A constant parameter reports one effective draw per chain.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    let halves = split_halves(chains);
    let len = halves[0].len();
    let pooled: Vec<f64> = halves.iter().flat_map(|c| c.iter().copied()).collect();
    let s = pooled.len() as f64;
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| ranks[k] = avg);
        i = j + 1;
    }
    let normal = Normal::standard();
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect();
    let zc: Vec<&[f64]> = z.chunks(len).collect();
    let e = ess_of(&zc);
    if e.is_nan() {
        chains.len() as f64
    } else {
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub block: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub mcse_mean: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block: String,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub sampler: String,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub warmup: usize,
    /// Gibbs updates are always accepted.
    pub acceptance_rate: f64,
    pub divergent_draws: usize,
    pub blocks: Vec<BlockSummary>,
    pub parameters: Vec<ParameterDiagnostics>,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn max_coef_rhat(&self) -> f64 {
        self.parameters
            .iter()
            .filter(|p| p.block == "w" || p.block == "b")
            .map(|p| p.rhat)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn describe(name: String, block: &str, chains: Vec<Vec<f64>>) -> ParameterDiagnostics {
    let pooled: Vec<f64> = chains.concat();
    let mu = mean(&pooled);
    let sd = if pooled.len() > 1 {
        crate::linalg::sample_variance(&pooled).sqrt()
    } else {
        0.0
    };
    let mut flags = Vec::new();
    if pooled.iter().all(|v| *v == pooled[0]) {
        flags.push("constant".to_string());
    }
    if chains.len() > 1 && chains.iter().all(|c| c == &chains[0]) {
        flags.push("identical_chains".to_string());
    }
    let ess_raw = ess_mean(&chains);
    ParameterDiagnostics {
        name,
        block: block.to_string(),
        mean: mu,
        sd,
        rhat: split_rhat(&chains),
        ess_bulk: ess_bulk(&chains),
        mcse_mean: sd / ess_raw.sqrt(),
        flags,
    }
}

/// Per-parameter and per-block diagnostics. Only sampled blocks appear.
pub fn diagnostics(draws: &PosteriorDraws) -> DiagnosticsReport {
    let mut params = Vec::new();
    for j in 0..draws.d {
        params.push(describe(format!("w[{j}]"), "w", draws.coef_chains(j)));
    }
    if draws.intercept {
        params.push(describe("b".into(), "b", draws.coef_chains(draws.d)));
    }
    if draws.sampled_sigma {
        params.push(describe("sigma".into(), "sigma", draws.sigma_chains()));
    }
    if draws.sampled_scales {
        params.push(describe("tau".into(), "tau", draws.tau_chains()));
        for j in 0..draws.d {
            params.push(describe(format!("lambda[{j}]"), "lambda", draws.lambda_chains(j)));
        }
    }
    let mut blocks: Vec<BlockSummary> = Vec::new();
    for p in &params {
        match blocks.iter_mut().find(|b| b.block == p.block) {
            Some(b) => {
                b.max_rhat = b.max_rhat.max(p.rhat);
                b.min_ess_bulk = b.min_ess_bulk.min(p.ess_bulk);
            }
            None => blocks.push(BlockSummary {
                block: p.block.clone(),
                max_rhat: p.rhat,
                min_ess_bulk: p.ess_bulk,
            }),
        }
    }
    let mut warnings = Vec::new();
    for p in params.iter().filter(|p| p.block == "w" || p.block == "b") {
        if p.rhat > RHAT_THRESHOLD {
            let msg = format!("split R-hat {:.4} > {RHAT_THRESHOLD} for {}", p.rhat, p.name);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    DiagnosticsReport {
        sampler: "gibbs".into(),
        chains: draws.chains,
        draws_per_chain: draws.draws_per_chain,
        warmup: draws.warmup,
        acceptance_rate: 1.0,
        divergent_draws: 0,
        blocks,
        parameters: params,
        warnings,
    }
}
