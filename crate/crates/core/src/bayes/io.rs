//! `posterior.bin`: a rank-3 BTSR tensor `chains x kept x params` plus a
//! `<name>.params.json` sidecar naming the parameter axis.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BayesError, BlrPriorConfig, PosteriorDraws};
use crate::container::{sidecar_path, Tensor, TensorData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorLayout {
    /// `w[0..d]`, `b`, `sigma`, `tau`, `lambda[0..d]`.
    pub names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub warmup: usize,
    pub d: usize,
    pub intercept: bool,
    pub sampled_scales: bool,
    pub sampled_sigma: bool,
    pub prior: BlrPriorConfig,
}

fn names(d: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..d).map(|j| format!("w[{j}]")).collect();
    v.extend(["b".to_string(), "sigma".to_string(), "tau".to_string()]);
    v.extend((0..d).map(|j| format!("lambda[{j}]")));
    v
}

pub fn write_posterior(draws: &PosteriorDraws, path: impl AsRef<Path>) -> Result<(), BayesError> {
    let path = path.as_ref();
    let d = draws.d;
    let p = 2 * d + 3;
    let mut data = Vec::with_capacity(draws.total() * p);
    for s in 0..draws.total() {
        data.extend_from_slice(&draws.coefs[s * (d + 1)..(s + 1) * (d + 1)]);
        data.push(draws.sigma[s]);
        data.push(draws.tau[s]);
        data.extend_from_slice(&draws.lambda[s * d..(s + 1) * d]);
    }
    Tensor::new(vec![draws.chains, draws.kept(), p], TensorData::F64(data))?.write(path)?;
    let layout = PosteriorLayout {
        names: names(d),
        chains: draws.chains,
        draws_per_chain: draws.draws_per_chain,
        warmup: draws.warmup,
        d,
        intercept: draws.intercept,
        sampled_scales: draws.sampled_scales,
        sampled_sigma: draws.sampled_sigma,
        prior: draws.prior,
    };
    let json = serde_json::to_vec_pretty(&layout).expect("layout serializes");
    fs::write(sidecar_path(path, "params.json"), json)?;
    Ok(())
}

pub fn read_posterior(path: impl AsRef<Path>) -> Result<PosteriorDraws, BayesError> {
    let path = path.as_ref();
    let side = sidecar_path(path, "params.json");
    let layout: PosteriorLayout = serde_json::from_slice(&fs::read(&side)?)
        .map_err(|e| BayesError::Sidecar(format!("{}: {e}", side.display())))?;
    let tensor = Tensor::read(path)?;
    let d = layout.d;
    let p = 2 * d + 3;
    let kept = layout.draws_per_chain.saturating_sub(layout.warmup);
    if tensor.dims() != [layout.chains, kept, p] || layout.names.len() != p {
        return Err(BayesError::Sidecar(format!(
            "tensor dims {:?} do not match layout ({} chains, {kept} kept, {p} params)",
            tensor.dims(),
            layout.chains
        )));
    }
    let TensorData::F64(data) = tensor.into_data() else {
        return Err(BayesError::Sidecar("posterior tensor must be f64".into()));
    };
    let mut draws = PosteriorDraws {
        chains: layout.chains,
        draws_per_chain: layout.draws_per_chain,
        warmup: layout.warmup,
        d,
        intercept: layout.intercept,
        prior: layout.prior,
        sampled_scales: layout.sampled_scales,
        sampled_sigma: layout.sampled_sigma,
        coefs: Vec::new(),
        sigma: Vec::new(),
        tau: Vec::new(),
        lambda: Vec::new(),
    };
    for row in data.chunks(p) {
        draws.coefs.extend_from_slice(&row[..=d]);
        draws.sigma.push(row[d + 1]);
        draws.tau.push(row[d + 2]);
        draws.lambda.extend_from_slice(&row[d + 3..]);
    }
    Ok(draws)
}
