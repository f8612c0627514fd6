//! Individual pipeline stages, shared by the subcommands and `run`.

use std::fs;
use std::path::Path;

use mvuq_core::bayes::{
    diagnostics, fit_blr_conjugate_plugin, fit_blr_mcmc, read_posterior, write_posterior, BlrPriorConfig,
    DiagnosticsReport, McmcConfig, PosteriorDraws, StandardizedPosterior,
};
use mvuq_core::container::sidecar_path;
use mvuq_core::featurize::{fuse_views, import_features, write_features, FeatureMatrix, RandomConvFeaturizer};
use mvuq_core::geoviz::{
    fit_variogram, krige, write_grid_btsr, write_heatmap_png, write_markers_geojson, FieldKind, GridSpec,
    KrigedGrid, ScatterField, VariogramModel,
};
use mvuq_core::hetero::{fit_hetero, predict_hetero, HeteroConfig, HeteroModel};
use mvuq_core::linalg::derive_seed;
use mvuq_core::raster::{compose_view, load_raster, save_view_btsr, save_view_png, BandRaster, ViewImage, ViewSpec};
use mvuq_core::regress::{fit_ridge_cv, mean_baseline, CvReport, RidgeModel, RidgeOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FeaturizeSection;
use crate::error::{CliError, StageContext};
use crate::io::Predictions;
use crate::provenance::{write_stamped_json, Provenance};

/// Composes one view of one raster and writes it as BTSR or PNG, chosen by
/// the output extension.
pub fn compose(input: &Path, view: &str, out: &Path) -> Result<(), CliError> {
    let spec = ViewSpec::parse(view).map_err(CliError::config)?;
    let raster = load_raster(input).stage("compose")?;
    let image = compose_view(&raster, &spec).stage("compose")?;
    match out.extension().and_then(|e| e.to_str()) {
        Some("png") => save_view_png(&image, out),
        _ => save_view_btsr(&image, out),
    }
    .stage("compose")
}

/// One feature matrix per view, rows in `rasters` order. View `k` uses
/// featurizer seed `derive_seed(seed, k)`.
pub fn featurize_views(
    rasters: &[(String, BandRaster)],
    views: &[ViewSpec],
    params: &FeaturizeSection,
    seed: u64,
) -> Result<Vec<FeatureMatrix>, CliError> {
    let ids: Vec<String> = rasters.iter().map(|(id, _)| id.clone()).collect();
    let coords: Vec<(f64, f64)> = rasters.iter().map(|(_, r)| r.origin).collect();
    views
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let images: Vec<ViewImage> = rasters
                .par_iter()
                .map(|(id, r)| compose_view(r, spec).map_err(|e| CliError::stage("compose", format!("{id}: {e}"))))
                .collect::<Result<_, _>>()?;
            let mut f = RandomConvFeaturizer::new(params.filters, params.patch_size, derive_seed(seed, k as u64))
                .stage("featurize")?;
            if let Some(s) = params.stride {
                f = f.with_stride(s).stage("featurize")?;
            }
            if params.calibrate {
                f.calibrate_biases(&images[0]).stage("featurize")?;
            }
            f.extract_matrix(&images, ids.clone(), &spec.name)
                .and_then(|m| m.with_coords(coords.clone()))
                .stage("featurize")
        })
        .collect()
}

pub fn load_features(paths: &[impl AsRef<Path>]) -> Result<Vec<FeatureMatrix>, CliError> {
    paths
        .iter()
        .map(|p| import_features(p).map_err(|e| CliError::stage("featurize", format!("{}: {e}", p.as_ref().display()))))
        .collect()
}

pub fn save_features(m: &FeatureMatrix, path: &Path) -> Result<(), CliError> {
    write_features(m, path).map_err(|e| CliError::stage("featurize", format!("{}: {e}", path.display())))
}

/// Column-wise concatenation; a single view is returned unchanged.
pub fn fuse(views: &[FeatureMatrix]) -> Result<FeatureMatrix, CliError> {
    if views.len() == 1 {
        return Ok(views[0].clone());
    }
    let refs: Vec<&FeatureMatrix> = views.iter().collect();
    fuse_views(&refs).stage("fuse")
}

/// A fitted model as stored in a model JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Mean { mean: f64 },
    RidgeCv { model: RidgeModel },
    Hetero { model: HeteroModel },
    BlrConjugate { posterior: StandardizedPosterior },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub provenance: Provenance,
    pub model: SavedModel,
}

impl SavedModel {
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Predictions, CliError> {
        let x = features.to_matrix();
        Ok(match self {
            SavedModel::Mean { mean } => Predictions::point(vec![*mean; x.nrows()]),
            SavedModel::RidgeCv { model } => Predictions::point(model.predict(&x).stage("predict")?),
            SavedModel::Hetero { model } => Predictions::from_dists(&predict_hetero(model, &x).stage("predict")?),
            SavedModel::BlrConjugate { posterior } => Predictions::from_dists(&posterior.predict(&x).stage("predict")?),
        })
    }
}

pub fn fit_mean(y: &[f64]) -> Result<SavedModel, CliError> {
    Ok(SavedModel::Mean { mean: mean_baseline(y).stage("fit")?.mean })
}

/// Ridge with the penalty chosen by K-fold CV on standardized features.
pub fn fit_ridge(
    features: &FeatureMatrix,
    y: &[f64],
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(SavedModel, CvReport), CliError> {
    let k = folds.min(y.len());
    let (model, cv) =
        fit_ridge_cv(&features.to_matrix(), y, grid, k, seed, &RidgeOptions { standardize: true }).stage("fit")?;
    Ok((SavedModel::RidgeCv { model }, cv))
}

pub fn fit_hetero_model(features: &FeatureMatrix, y: &[f64], lr: f64, epochs: usize) -> Result<SavedModel, CliError> {
    let cfg = HeteroConfig { lr, epochs, ..HeteroConfig::default() };
    Ok(SavedModel::Hetero { model: fit_hetero(&features.to_matrix(), y, &cfg).stage("fit")? })
}

pub fn fit_conjugate(
    features: &FeatureMatrix,
    y: &[f64],
    c: f64,
    intercept_sd: f64,
    inner_folds: usize,
    seed: u64,
) -> Result<SavedModel, CliError> {
    let posterior = fit_blr_conjugate_plugin(&features.to_matrix(), y, c, intercept_sd, inner_folds, seed).stage("fit")?;
    Ok(SavedModel::BlrConjugate { posterior })
}

pub fn fit_mcmc(
    features: &FeatureMatrix,
    y: &[f64],
    prior: &BlrPriorConfig,
    mcmc: &McmcConfig,
) -> Result<(PosteriorDraws, DiagnosticsReport), CliError> {
    prior.validate().map_err(CliError::config)?;
    let draws = fit_blr_mcmc(&features.to_matrix(), y, prior, mcmc).stage("fit")?;
    let diag = diagnostics(&draws);
    for w in &diag.warnings {
        log::warn!("{w}");
    }
    Ok((draws, diag))
}

pub fn write_model(path: &Path, provenance: &Provenance, model: &SavedModel) -> Result<(), CliError> {
    let file = ModelFile { provenance: provenance.clone(), model: model.clone() };
    let mut bytes = serde_json::to_vec_pretty(&file).expect("model serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::stage("fit", format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: &T, stage: &'static str) -> Result<(), CliError> {
    write_stamped_json(path, provenance, body).map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))
}

/// Draws in BTSR plus the parameter-name sidecar, and a provenance sidecar.
pub fn write_draws(path: &Path, provenance: &Provenance, draws: &PosteriorDraws) -> Result<(), CliError> {
    write_posterior(draws, path).stage("fit")?;
    write_json(&sidecar_path(path, "provenance.json"), provenance, &serde_json::json!({}), "fit")
}

/// Predictions from either a model JSON or a BTSR posterior file.
pub fn predict_file(model: &Path, features: &FeatureMatrix, seed: u64) -> Result<Predictions, CliError> {
    let bytes = fs::read(model).map_err(|e| CliError::config(format!("{}: {e}", model.display())))?;
    if bytes.starts_with(b"BTSR") {
        let draws = read_posterior(model).stage("predict")?;
        let dists = draws.predict(&features.to_matrix(), seed).stage("predict")?;
        return Ok(Predictions::from_dists(&dists));
    }
    let file: ModelFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::config(format!("{}: not a model file: {e}", model.display())))?;
    file.model.predict(features)
}

/// Field kind implied by a prediction column name.
pub fn field_kind(value_col: &str) -> FieldKind {
    match value_col {
        "mu" | "posterior_mean" => FieldKind::PosteriorMean,
        "var" | "posterior_variance" => FieldKind::PosteriorVariance,
        _ => FieldKind::Target,
    }
}

pub struct KrigeOutputs<'a> {
    pub grid: &'a Path,
    pub png: Option<&'a Path>,
    pub markers: Option<&'a Path>,
}

/// Fits a variogram to the points, kriges the grid and writes the grid,
/// variogram sidecar, and optional heatmap and markers.
pub fn krige_points(
    field: &ScatterField,
    spec: &GridSpec,
    n_bins: usize,
    provenance: &Provenance,
    out: &KrigeOutputs<'_>,
) -> Result<(VariogramModel, KrigedGrid), CliError> {
    let model = fit_variogram(field, n_bins).stage("krige")?;
    let grid = krige(field, &model, spec).stage("krige")?;
    write_grid_btsr(&grid, out.grid).stage("krige")?;
    write_json(&sidecar_path(out.grid, "variogram.json"), provenance, &model, "krige")?;
    if let Some(png) = out.png {
        write_heatmap_png(&grid.estimate, grid.nx, grid.ny, "estimate", png).stage("krige")?;
    }
    if let Some(m) = out.markers {
        write_markers_geojson(field, m).stage("krige")?;
    }
    Ok((model, grid))
}
