//! The end-to-end `run` command.

use std::fs;
use std::path::{Path, PathBuf};

use mvuq_core::featurize::FeatureMatrix;
use mvuq_core::geoviz::{GridSpec, ScatterField};
use mvuq_core::linalg::derive_seed;
use mvuq_core::uqmetrics::{evaluate_pipeline, report_csv_bytes, HarnessData, ScoreReport};
use serde::Serialize;

use crate::config::{ModelName, PipelineConfig};
use crate::error::{CliError, StageContext};
use crate::io::{align_targets, create_dir, load_raster_dir, read_targets, write_predictions, Predictions};
use crate::provenance::{sha256_hex, Provenance};
use crate::stages::{self, KrigeOutputs};

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct RunManifest {
    views: Vec<String>,
    locations: usize,
    models: Vec<&'static str>,
    artifacts: Vec<ArtifactEntry>,
}

/// What `run` produced, relative to the output directory.
#[derive(Debug)]
pub struct RunSummary {
    pub report: ScoreReport,
    pub artifacts: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct Outputs {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.written.push(PathBuf::from(rel));
        self.root.join(rel)
    }

    /// Registers a sidecar written by a core writer next to `rel`.
    fn sidecar(&mut self, rel: &str, suffix: &str) {
        let p = mvuq_core::container::sidecar_path(Path::new(rel), suffix);
        self.written.push(p);
    }
}

/// Stage seeds are derived from the run seed so that adding a model does
/// not shift the streams of the others.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    derive_seed(seed, stage)
}

pub fn run(cfg: &PipelineConfig) -> Result<RunSummary, CliError> {
    let warnings = cfg.validate()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let specs = cfg.view_specs()?;
    let hash = cfg.hash();
    let prov = |stage: &str| Provenance::new(stage, cfg.seed, hash.clone());
    let mut out = Outputs { root: cfg.output.clone(), written: Vec::new() };
    for sub in ["features", "models", "predictions"] {
        create_dir(&cfg.output.join(sub))?;
    }

    // compose + featurize
    let mut views: Vec<FeatureMatrix> = Vec::new();
    if let Some(dir) = &cfg.inputs.rasters {
        let rasters = load_raster_dir(dir)?;
        let derived = stages::featurize_views(&rasters, &specs, &cfg.featurize, stage_seed(cfg.seed, 0))?;
        for m in &derived {
            let rel = format!("features/{}.fmx", m.view_name);
            stages::save_features(m, &out.path(&rel))?;
            out.sidecar(&rel, "manifest.json");
        }
        views.extend(derived);
    }
    views.extend(stages::load_features(&cfg.inputs.features)?);
    let mut names: Vec<String> = Vec::new();
    for v in &views {
        if names.contains(&v.view_name) {
            return Err(CliError::config(format!("two inputs share the view name {}", v.view_name)));
        }
        names.push(v.view_name.clone());
    }

    // fuse
    let fused = stages::fuse(&views)?;
    if views.len() > 1 {
        stages::save_features(&fused, &out.path("features/fused.fmx"))?;
        out.sidecar("features/fused.fmx", "manifest.json");
    }
    let targets = read_targets(&cfg.inputs.targets)?;
    let y = align_targets(fused.row_ids(), &targets)?;

    // fit + predict on all locations
    let fit_seed = stage_seed(cfg.seed, 1);
    let mut krige_source: Option<Predictions> = None;
    for &model in &cfg.fit.models {
        let name = model.as_str();
        let pred = match model {
            ModelName::BlrMcmc => {
                let (draws, diag) = stages::fit_mcmc(&fused, &y, &cfg.fit.prior(), &cfg.fit.mcmc(fit_seed))?;
                let rel = format!("models/{name}.btsr");
                stages::write_draws(&out.path(&rel), &prov("fit"), &draws)?;
                out.sidecar(&rel, "params.json");
                out.sidecar(&rel, "provenance.json");
                stages::write_json(&out.path(&format!("models/{name}.diag.json")), &prov("fit"), &diag, "fit")?;
                let dists = draws.predict(&fused.to_matrix(), derive_seed(fit_seed, 1)).stage("predict")?;
                Predictions::from_dists(&dists)
            }
            _ => {
                let saved = match model {
                    ModelName::Mean => stages::fit_mean(&y)?,
                    ModelName::RidgeCv => {
                        let (m, cv) =
                            stages::fit_ridge(&fused, &y, &cfg.fit.ridge_grid, cfg.fit.inner_folds, fit_seed)?;
                        stages::write_json(&out.path(&format!("models/{name}.cv.json")), &prov("fit"), &cv, "fit")?;
                        m
                    }
                    ModelName::Hetero => stages::fit_hetero_model(&fused, &y, cfg.fit.hetero_lr, cfg.fit.hetero_epochs)?,
                    ModelName::BlrConjugate => stages::fit_conjugate(
                        &fused,
                        &y,
                        cfg.fit.c,
                        cfg.fit.intercept_sd,
                        cfg.fit.inner_folds,
                        fit_seed,
                    )?,
                    ModelName::BlrMcmc => unreachable!(),
                };
                stages::write_model(&out.path(&format!("models/{name}.json")), &prov("fit"), &saved)?;
                saved.predict(&fused)?
            }
        };
        write_predictions(
            &out.path(&format!("predictions/{name}.csv")),
            &prov("predict"),
            fused.row_ids(),
            fused.coords.as_deref(),
            &pred,
        )?;
        if cfg.krige.as_ref().is_some_and(|k| k.model == model) {
            krige_source = Some(pred);
        }
    }

    // evaluate
    let data = HarnessData { views, targets: y };
    let report = evaluate_pipeline(&data, &cfg.eval_config()).stage("evaluate")?;
    stages::write_json(&out.path("report.json"), &prov("evaluate"), &report, "evaluate")?;
    write_report_csv(&out.path("report.csv"), &prov("evaluate"), &report)?;

    // krige
    if let (Some(k), Some(pred)) = (&cfg.krige, krige_source) {
        match fused.coords.as_deref() {
            None => log::warn!("no location coordinates; skipping kriging"),
            Some(coords) => {
                let values = if k.value == "var" {
                    pred.var.ok_or_else(|| CliError::config(format!("{} has no predictive variance", k.model.as_str())))?
                } else {
                    pred.mu
                };
                let field = ScatterField::new(coords.to_vec(), values, stages::field_kind(&k.value)).stage("krige")?;
                let spec = GridSpec::parse_bbox(&k.bbox, k.res_km).map_err(CliError::config)?;
                create_dir(&cfg.output.join("krige"))?;
                let (grid, png, markers) =
                    (out.path("krige/grid.btsr"), out.path("krige/grid.png"), out.path("krige/points.geojson"));
                out.sidecar("krige/grid.btsr", "grid.json");
                out.sidecar("krige/grid.btsr", "variogram.json");
                out.sidecar("krige/grid.png", "legend.json");
                let outputs = KrigeOutputs { grid: &grid, png: Some(&png), markers: Some(&markers) };
                stages::krige_points(&field, &spec, k.n_bins, &prov("krige"), &outputs)?;
            }
        }
    }

    // manifest of everything written, with content hashes
    let mut artifacts = Vec::new();
    for rel in &out.written {
        let bytes = fs::read(cfg.output.join(rel)).stage("manifest")?;
        artifacts.push(ArtifactEntry { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&bytes) });
    }
    let manifest = RunManifest {
        views: names,
        locations: fused.n(),
        models: cfg.fit.models.iter().map(|m| m.as_str()).collect(),
        artifacts,
    };
    stages::write_json(&cfg.output.join("manifest.json"), &prov("run"), &manifest, "manifest")?;
    let mut written = out.written;
    written.push(PathBuf::from("manifest.json"));
    Ok(RunSummary { report, artifacts: written, warnings })
}

/// The score report as CSV, after a provenance comment line.
pub fn write_report_csv(path: &Path, provenance: &Provenance, report: &ScoreReport) -> Result<(), CliError> {
    let mut bytes = provenance.comment_line().into_bytes();
    bytes.push(b'\n');
    bytes.extend(report_csv_bytes(report).stage("evaluate")?);
    fs::write(path, bytes).map_err(|e| CliError::stage("evaluate", format!("{}: {e}", path.display())))
}
