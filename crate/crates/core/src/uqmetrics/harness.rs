use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{coverage_and_length, eval_nll, mean_crps, UqError};
use crate::bayes::{fit_blr_conjugate_plugin, fit_blr_mcmc, BlrPriorConfig, McmcConfig};
use crate::dist::PredictiveDistribution;
use crate::featurize::{fuse_views, FeatureMatrix};
use crate::hetero::{fit_hetero, predict_hetero, HeteroConfig};
use crate::linalg::{derive_seed, mean, sample_variance, select, select_rows};
use crate::regress::{complement, default_alpha_grid, fit_ridge_cv, kfold_indices, mae, mean_baseline, RidgeOptions};

pub const REPORT_SCHEMA: &str = "uqreport/1";
pub const NLL_CONVENTION: &str =
    "gaussian NLL without the log(2 pi)/2 constant; sample predictives moment-matched (mean, unbiased variance)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Mean,
    Ridge {
        #[serde(default = "default_alpha_grid")]
        alpha_grid: Vec<f64>,
        #[serde(default = "default_inner_folds")]
        inner_folds: usize,
    },
    Hetero {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_hetero_epochs")]
        epochs: usize,
    },
    /// Conjugate BLR on train-standardized features; the noise variance is
    /// the out-of-fold MSE of an inner ridge CV on the training fold.
    BlrConjugate {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_intercept_sd")]
        intercept_sd: f64,
        #[serde(default = "default_inner_folds")]
        inner_folds: usize,
    },
    BlrMcmc {
        #[serde(default)]
        prior: BlrPriorConfig,
        #[serde(default)]
        mcmc: McmcConfig,
    },
}

fn default_inner_folds() -> usize {
    5
}
fn default_lr() -> f64 {
    HeteroConfig::default().lr
}
fn default_hetero_epochs() -> usize {
    HeteroConfig::default().epochs
}
fn default_c() -> f64 {
    1.0
}
fn default_intercept_sd() -> f64 {
    5.0
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Mean => "mean",
            MethodSpec::Ridge { .. } => "ridge",
            MethodSpec::Hetero { .. } => "hetero",
            MethodSpec::BlrConjugate { .. } => "blr_conjugate",
            MethodSpec::BlrMcmc { .. } => "blr_mcmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSubset {
    pub name: String,
    pub views: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub methods: Vec<MethodSpec>,
    /// Empty: every single view plus all views fused.
    #[serde(default)]
    pub subsets: Vec<ViewSubset>,
    /// Clip point predictions to [0, 1] before computing MAE. Predictive
    /// distributions are scored unclipped.
    #[serde(default)]
    pub clamp_01: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 5,
            seed: 0,
            alpha: 0.95,
            methods: vec![
                MethodSpec::Mean,
                MethodSpec::Ridge {
                    alpha_grid: default_alpha_grid(),
                    inner_folds: 5,
                },
            ],
            subsets: Vec::new(),
            clamp_01: false,
        }
    }
}

/// Per-view feature matrices over the same locations, and their targets.
pub struct HarnessData {
    pub views: Vec<FeatureMatrix>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub method: String,
    pub views: String,
    pub fold_mae: Vec<f64>,
    pub mae_mean: f64,
    pub mae_se: f64,
    /// Ridge penalty chosen inside each training fold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqRow {
    pub method: String,
    pub views: String,
    pub interval_length: f64,
    pub coverage: f64,
    pub nll: f64,
    pub crps: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema: String,
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub n: usize,
    pub nll_convention: String,
    pub fold_sizes: Vec<usize>,
    pub mae: Vec<MaeRow>,
    pub uncertainty: Vec<UqRow>,
}

impl ScoreReport {
    pub fn mae_row(&self, method: &str, views: &str) -> Option<&MaeRow> {
        self.mae.iter().find(|r| r.method == method && r.views == views)
    }

    pub fn uq_row(&self, method: &str, views: &str) -> Option<&UqRow> {
        self.uncertainty.iter().find(|r| r.method == method && r.views == views)
    }
}

enum FoldOutput {
    Point(Vec<f64>, Option<f64>),
    Dist(Vec<PredictiveDistribution>),
}

fn run_method(
    method: &MethodSpec,
    x_tr: &DMatrix<f64>,
    y_tr: &[f64],
    x_te: &DMatrix<f64>,
    seed: u64,
) -> Result<FoldOutput, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    Ok(match method {
        MethodSpec::Mean => {
            let m = mean_baseline(y_tr).map_err(|e| err(&e))?;
            FoldOutput::Point(m.predict(x_te.nrows()), None)
        }
        MethodSpec::Ridge { alpha_grid, inner_folds } => {
            let k = (*inner_folds).min(y_tr.len());
            let (model, rep) = fit_ridge_cv(x_tr, y_tr, alpha_grid, k, seed, &RidgeOptions { standardize: true })
                .map_err(|e| err(&e))?;
            FoldOutput::Point(model.predict(x_te).map_err(|e| err(&e))?, Some(rep.chosen_alpha))
        }
        MethodSpec::Hetero { lr, epochs } => {
            let cfg = HeteroConfig { lr: *lr, epochs: *epochs, ..HeteroConfig::default() };
            let model = fit_hetero(x_tr, y_tr, &cfg).map_err(|e| err(&e))?;
            FoldOutput::Dist(predict_hetero(&model, x_te).map_err(|e| err(&e))?)
        }
        MethodSpec::BlrConjugate { c, intercept_sd, inner_folds } => {
            let post = fit_blr_conjugate_plugin(x_tr, y_tr, *c, *intercept_sd, *inner_folds, seed).map_err(|e| err(&e))?;
            FoldOutput::Dist(post.predict(x_te).map_err(|e| err(&e))?)
        }
        MethodSpec::BlrMcmc { prior, mcmc } => {
            let cfg = McmcConfig { seed, ..*mcmc };
            let draws = fit_blr_mcmc(x_tr, y_tr, prior, &cfg).map_err(|e| err(&e))?;
            FoldOutput::Dist(draws.predict(x_te, derive_seed(seed, 1)).map_err(|e| err(&e))?)
        }
    })
}

fn subsets(data: &HarnessData, config: &EvalConfig) -> Vec<ViewSubset> {
    if !config.subsets.is_empty() {
        return config.subsets.clone();
    }
    let mut out: Vec<ViewSubset> = data
        .views
        .iter()
        .map(|v| ViewSubset { name: v.view_name.clone(), views: vec![v.view_name.clone()] })
        .collect();
    if data.views.len() > 1 {
        out.push(ViewSubset {
            name: "fused".into(),
            views: data.views.iter().map(|v| v.view_name.clone()).collect(),
        });
    }
    out
}

fn se(v: &[f64]) -> f64 {
    (sample_variance(v) / v.len() as f64).sqrt()
}

/// K-fold evaluation of every method on every view subset. All methods and
/// subsets share one fold partition; folds run in parallel and the report is
/// assembled in a fixed order, so equal inputs give equal reports.
pub fn evaluate_pipeline(data: &HarnessData, config: &EvalConfig) -> Result<ScoreReport, UqError> {
    let n = data.targets.len();
    if data.views.is_empty() {
        return Err(UqError::Config("no views".into()));
    }
    super::check_alpha(config.alpha)?;
    if config.folds < 2 || config.folds > n {
        return Err(UqError::Config(format!("need 2 <= folds <= n, got {} folds for {n} rows", config.folds)));
    }
    for v in &data.views {
        if v.n() != n {
            return Err(UqError::Config(format!("view {} has {} rows, targets have {n}", v.view_name, v.n())));
        }
    }
    let folds = kfold_indices(n, config.folds, config.seed);
    let mut report = ScoreReport {
        schema: REPORT_SCHEMA.into(),
        folds: config.folds,
        seed: config.seed,
        alpha: config.alpha,
        n,
        nll_convention: NLL_CONVENTION.into(),
        fold_sizes: folds.iter().map(Vec::len).collect(),
        mae: Vec::new(),
        uncertainty: Vec::new(),
    };
    for (si, subset) in subsets(data, config).iter().enumerate() {
        let chosen: Vec<&FeatureMatrix> = subset
            .views
            .iter()
            .map(|name| {
                data.views
                    .iter()
                    .find(|v| &v.view_name == name)
                    .ok_or_else(|| UqError::Config(format!("unknown view {name} in subset {}", subset.name)))
            })
            .collect::<Result<_, _>>()?;
        let x = if chosen.len() == 1 {
            chosen[0].to_matrix()
        } else {
            fuse_views(&chosen)
                .map_err(|e| UqError::Config(format!("subset {}: {e}", subset.name)))?
                .to_matrix()
        };
        for (mi, method) in config.methods.iter().enumerate() {
            let outputs: Vec<FoldOutput> = folds
                .par_iter()
                .enumerate()
                .map(|(f, test)| {
                    let train = complement(n, test);
                    let seed = derive_seed(config.seed, ((si as u64) << 40) | ((mi as u64) << 20) | f as u64);
                    run_method(
                        method,
                        &select_rows(&x, &train),
                        &select(&data.targets, &train),
                        &select_rows(&x, test),
                        seed,
                    )
                    .map_err(|message| UqError::Stage {
                        fold: f,
                        method: method.name().into(),
                        views: subset.name.clone(),
                        message,
                    })
                })
                .collect::<Result<_, _>>()?;

            let mut fold_mae = Vec::new();
            let mut alphas = Vec::new();
            let mut dists = Vec::new();
            let mut truth = Vec::new();
            let clip = |p: Vec<f64>| -> Vec<f64> {
                if config.clamp_01 {
                    p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
                } else {
                    p
                }
            };
            for (test, out) in folds.iter().zip(outputs) {
                let y_te = select(&data.targets, test);
                match out {
                    FoldOutput::Point(pred, alpha) => {
                        fold_mae.push(mae(&clip(pred), &y_te));
                        alphas.extend(alpha);
                    }
                    FoldOutput::Dist(d) => {
                        let pred = d.iter().map(PredictiveDistribution::mean).collect();
                        fold_mae.push(mae(&clip(pred), &y_te));
                        dists.extend(d);
                        truth.extend(y_te);
                    }
                }
            }
            report.mae.push(MaeRow {
                method: method.name().into(),
                views: subset.name.clone(),
                mae_mean: mean(&fold_mae),
                mae_se: se(&fold_mae),
                fold_mae,
                chosen_alpha: (!alphas.is_empty()).then_some(alphas),
            });
            if !dists.is_empty() {
                let iv = coverage_and_length(&dists, &truth, config.alpha)?;
                report.uncertainty.push(UqRow {
                    method: method.name().into(),
                    views: subset.name.clone(),
                    interval_length: iv.mean_length,
                    coverage: iv.coverage,
                    nll: eval_nll(&dists, &truth)?,
                    crps: mean_crps(&dists, &truth)?,
                    n: truth.len(),
                });
            }
        }
    }
    Ok(report)
}

pub fn write_report_json(report: &ScoreReport, path: impl AsRef<Path>) -> Result<(), UqError> {
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    fs::write(path, json)?;
    Ok(())
}

/// One row per method and view subset: MAE columns, then the uncertainty
/// columns (empty for point predictors).
pub fn write_report_csv(report: &ScoreReport, path: impl AsRef<Path>) -> Result<(), UqError> {
    fs::write(path, report_csv_bytes(report)?)?;
    Ok(())
}

/// The CSV form written by [`write_report_csv`].
pub fn report_csv_bytes(report: &ScoreReport) -> Result<Vec<u8>, UqError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "views", "mae", "mae_se", "interval_length", "coverage", "nll", "crps"])?;
    for row in &report.mae {
        let uq = report.uq_row(&row.method, &row.views);
        let cell = |f: fn(&UqRow) -> f64| uq.map(|u| f(u).to_string()).unwrap_or_default();
        w.write_record([
            row.method.clone(),
            row.views.clone(),
            row.mae_mean.to_string(),
            row.mae_se.to_string(),
            cell(|u| u.interval_length),
            cell(|u| u.coverage),
            cell(|u| u.nll),
            cell(|u| u.crps),
        ])?;
    }
    w.into_inner().map_err(|e| UqError::Io(e.into_error()))
}
