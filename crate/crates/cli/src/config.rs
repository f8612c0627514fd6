//! TOML configuration for `run`, `validate` and `evaluate`.
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use mvuq_core::bayes::{BlrPriorConfig, McmcConfig, PriorKind};
use mvuq_core::featurize::FmxManifest;
use mvuq_core::raster::{BandId, ViewSpec};
use mvuq_core::regress::default_alpha_grid;
use mvuq_core::uqmetrics::{EvalConfig, MethodSpec, ViewSubset};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io::raster_files;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Mean,
    RidgeCv,
    Hetero,
    BlrConjugate,
    BlrMcmc,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Mean => "mean",
            ModelName::RidgeCv => "ridge_cv",
            ModelName::Hetero => "hetero",
            ModelName::BlrConjugate => "blr_conjugate",
            ModelName::BlrMcmc => "blr_mcmc",
        }
    }

    pub fn is_probabilistic(self) -> bool {
        matches!(self, ModelName::Hetero | ModelName::BlrConjugate | ModelName::BlrMcmc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub inputs: InputsSection,
    #[serde(default)]
    pub featurize: FeaturizeSection,
    pub fit: FitSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub krige: Option<KrigeSection>,
}

fn default_output() -> PathBuf {
    PathBuf::from("mvuq-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsSection {
    /// Directory of `<location>.btsr` rasters with `.bands.json` sidecars.
    #[serde(default)]
    pub rasters: Option<PathBuf>,
    /// Pre-computed FMX feature files, one view each.
    #[serde(default)]
    pub features: Vec<PathBuf>,
    pub targets: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizeSection {
    /// Preset names or `custom:<b1,b2,b3>`.
    #[serde(default)]
    pub views: Vec<String>,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default)]
    pub stride: Option<usize>,
    /// Draw biases from the first location's patches.
    #[serde(default = "yes")]
    pub calibrate: bool,
}

fn default_filters() -> usize {
    512
}
fn default_patch() -> usize {
    3
}
fn yes() -> bool {
    true
}

impl Default for FeaturizeSection {
    fn default() -> Self {
        FeaturizeSection {
            views: Vec::new(),
            filters: default_filters(),
            patch_size: default_patch(),
            stride: None,
            calibrate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PriorName {
    GaussianRidge,
    HalfT,
    RegularizedHorseshoe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub models: Vec<ModelName>,
    #[serde(default = "default_alpha_grid")]
    pub ridge_grid: Vec<f64>,
    #[serde(default = "default_inner_folds")]
    pub inner_folds: usize,
    #[serde(default = "default_lr")]
    pub hetero_lr: f64,
    #[serde(default = "default_epochs")]
    pub hetero_epochs: usize,
    #[serde(default = "default_prior")]
    pub prior: PriorName,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_one")]
    pub c: f64,
    #[serde(default = "default_slab")]
    pub slab_scale: f64,
    #[serde(default = "default_intercept_sd")]
    pub intercept_sd: f64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

fn default_inner_folds() -> usize {
    5
}
fn default_lr() -> f64 {
    1e-2
}
fn default_epochs() -> usize {
    2000
}
fn default_prior() -> PriorName {
    PriorName::HalfT
}
fn default_nu() -> f64 {
    3.0
}
fn default_one() -> f64 {
    1.0
}
fn default_slab() -> f64 {
    2.0
}
fn default_intercept_sd() -> f64 {
    5.0
}
fn default_chains() -> usize {
    4
}
fn default_draws() -> usize {
    1500
}
fn default_warmup() -> usize {
    500
}

impl FitSection {
    pub fn prior(&self) -> BlrPriorConfig {
        let kind = match self.prior {
            PriorName::GaussianRidge => PriorKind::GaussianRidge { c: self.c },
            PriorName::HalfT => PriorKind::HalfT { nu: self.nu },
            PriorName::RegularizedHorseshoe => PriorKind::RegularizedHorseshoe { nu: self.nu, slab_scale: self.slab_scale },
        };
        BlrPriorConfig { kind, intercept_sd: self.intercept_sd }
    }

    pub fn mcmc(&self, seed: u64) -> McmcConfig {
        McmcConfig { chains: self.chains, draws: self.draws, warmup: self.warmup, seed, ..McmcConfig::default() }
    }

    pub fn method(&self, model: ModelName) -> MethodSpec {
        match model {
            ModelName::Mean => MethodSpec::Mean,
            ModelName::RidgeCv => MethodSpec::Ridge { alpha_grid: self.ridge_grid.clone(), inner_folds: self.inner_folds },
            ModelName::Hetero => MethodSpec::Hetero { lr: self.hetero_lr, epochs: self.hetero_epochs },
            ModelName::BlrConjugate => MethodSpec::BlrConjugate {
                c: self.c,
                intercept_sd: self.intercept_sd,
                inner_folds: self.inner_folds,
            },
            ModelName::BlrMcmc => MethodSpec::BlrMcmc { prior: self.prior(), mcmc: self.mcmc(0) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub clamp_01: bool,
    /// Empty: each view alone plus all views fused.
    #[serde(default)]
    pub subsets: Vec<ViewSubset>,
}

fn default_folds() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.95
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { folds: 5, alpha: 0.95, clamp_01: false, subsets: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrigeSection {
    pub model: ModelName,
    /// `mu` or `var` of the model's in-sample predictions.
    #[serde(default = "default_value")]
    pub value: String,
    /// `lon0,lat0,lon1,lat1`
    pub bbox: String,
    pub res_km: f64,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
}

fn default_value() -> String {
    "mu".into()
}
fn default_bins() -> usize {
    15
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

impl PipelineConfig {
    /// Parses the file and makes every path absolute relative to it.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.inputs.rasters = cfg.inputs.rasters.map(|p| resolve(base, &p));
        cfg.inputs.features = cfg.inputs.features.iter().map(|p| resolve(base, p)).collect();
        cfg.inputs.targets = resolve(base, &cfg.inputs.targets);
        cfg.output = resolve(base, &cfg.output);
        Ok(cfg)
    }

    /// Hash over everything that can change results; the output location
    /// is excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("config is an object").remove("output");
        crate::provenance::hash_json(&v)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            folds: self.evaluate.folds,
            seed: self.seed,
            alpha: self.evaluate.alpha,
            methods: self.fit.models.iter().map(|m| self.fit.method(*m)).collect(),
            subsets: self.evaluate.subsets.clone(),
            clamp_01: self.evaluate.clamp_01,
        }
    }

    pub fn view_specs(&self) -> Result<Vec<ViewSpec>, CliError> {
        self.featurize
            .views
            .iter()
            .map(|v| ViewSpec::parse(v).map_err(|e| CliError::config(format!("view {v:?}: {e}"))))
            .collect()
    }

    /// Schema, path and view/band checks using sidecars only. Returns
    /// warnings.
    pub fn validate(&self) -> Result<Vec<String>, CliError> {
        let mut warnings = Vec::new();
        if self.inputs.rasters.is_none() && self.inputs.features.is_empty() {
            return Err(CliError::config("inputs: need rasters or features"));
        }
        if self.fit.models.is_empty() {
            return Err(CliError::config("fit.models: need at least one model"));
        }
        if self.evaluate.folds < 2 {
            return Err(CliError::config(format!("evaluate.folds must be at least 2, got {}", self.evaluate.folds)));
        }
        if !(self.evaluate.alpha > 0.0 && self.evaluate.alpha < 1.0) {
            return Err(CliError::config(format!("evaluate.alpha must be in (0, 1), got {}", self.evaluate.alpha)));
        }
        if self.featurize.filters == 0 || self.featurize.patch_size == 0 {
            return Err(CliError::config("featurize: filters and patch_size must be positive"));
        }
        if self.fit.ridge_grid.is_empty() {
            return Err(CliError::config("fit.ridge_grid is empty"));
        }
        self.fit.prior().validate().map_err(CliError::config)?;
        if self.fit.models.contains(&ModelName::BlrMcmc) && self.fit.warmup >= self.fit.draws {
            return Err(CliError::config("fit: warmup must be smaller than draws"));
        }
        if !self.inputs.targets.is_file() {
            return Err(CliError::config(format!("targets file not found: {}", self.inputs.targets.display())));
        }
        let mut n_known = None;
        let mut view_names = Vec::new();
        if let Some(dir) = &self.inputs.rasters {
            if !dir.is_dir() {
                return Err(CliError::config(format!("raster directory not found: {}", dir.display())));
            }
            let specs = self.view_specs()?;
            if specs.is_empty() {
                return Err(CliError::config("featurize.views: rasters given but no views"));
            }
            let files = raster_files(dir)?;
            let bands = sidecar_bands(&files[0])?;
            for s in &specs {
                for b in &s.triplet {
                    if !bands.contains(b) {
                        return Err(CliError::config(format!(
                            "view {} needs band {} missing from {}",
                            s.name,
                            b.label,
                            files[0].display()
                        )));
                    }
                }
                view_names.push(s.name.clone());
            }
            n_known = Some(files.len());
        }
        for f in &self.inputs.features {
            if !f.is_file() {
                return Err(CliError::config(format!("feature file not found: {}", f.display())));
            }
            let side = mvuq_core::container::sidecar_path(f, "manifest.json");
            if side.is_file() {
                let m: FmxManifest = serde_json::from_slice(&fs::read(&side).map_err(CliError::config)?)
                    .map_err(|e| CliError::config(format!("{}: {e}", side.display())))?;
                if let Some(n) = n_known {
                    if n != m.locations.len() {
                        return Err(CliError::config(format!(
                            "{} lists {} locations, other inputs have {n}",
                            side.display(),
                            m.locations.len()
                        )));
                    }
                }
                n_known = Some(m.locations.len());
                view_names.push(m.view);
            }
        }
        for s in &self.evaluate.subsets {
            for v in &s.views {
                if !view_names.is_empty() && !view_names.contains(v) {
                    return Err(CliError::config(format!("subset {} names unknown view {v}", s.name)));
                }
            }
        }
        if let Some(n) = n_known {
            if self.evaluate.folds > n {
                warnings.push(format!("evaluate.folds = {} exceeds the {n} locations", self.evaluate.folds));
            }
        }
        if let Some(k) = &self.krige {
            mvuq_core::geoviz::GridSpec::parse_bbox(&k.bbox, k.res_km).map_err(CliError::config)?;
            if !self.fit.models.contains(&k.model) {
                return Err(CliError::config(format!("krige.model {} is not in fit.models", k.model.as_str())));
            }
            if k.value != "mu" && k.value != "var" {
                return Err(CliError::config(format!("krige.value must be mu or var, got {:?}", k.value)));
            }
        }
        Ok(warnings)
    }
}

fn sidecar_bands(raster: &Path) -> Result<Vec<BandId>, CliError> {
    #[derive(Deserialize)]
    struct Bands {
        bands: Vec<String>,
    }
    let side = mvuq_core::container::sidecar_path(raster, "bands.json");
    let bytes = fs::read(&side).map_err(|e| CliError::config(format!("{}: {e}", side.display())))?;
    let b: Bands = serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", side.display())))?;
    Ok(b.bands.iter().map(|l| BandId::from_label(l)).collect())
}

/// Config for the standalone `evaluate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub features: Vec<PathBuf>,
    pub targets: PathBuf,
    #[serde(flatten)]
    pub eval: EvalConfig,
}

impl EvalFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: EvalFile = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.features = cfg.features.iter().map(|p| resolve(base, p)).collect();
        cfg.targets = resolve(base, &cfg.targets);
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[inputs]
features = ["a.fmx"]
targets = "t.csv"
[fit]
models = ["mean", "ridge_cv"]
"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg: PipelineConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.evaluate.folds, 5);
        assert_eq!(cfg.fit.ridge_grid.len(), 17);
        assert_eq!(cfg.fit.prior(), BlrPriorConfig::default());
        assert_eq!(cfg.eval_config().methods.len(), 2);
    }

    #[test]
    fn unknown_model_lists_valid_names() {
        let text = MINIMAL.replace("\"ridge_cv\"", "\"lasso\"");
        let err = toml::from_str::<PipelineConfig>(&text).unwrap_err().to_string();
        for name in ["mean", "ridge_cv", "hetero", "blr_conjugate", "blr_mcmc"] {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn hash_ignores_output_only() {
        let a: PipelineConfig = toml::from_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 4;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn eval_file_parses_methods() {
        let text = r#"
features = ["a.fmx"]
targets = "t.csv"
folds = 4
seed = 1
alpha = 0.9
[[methods]]
kind = "mean"
[[methods]]
kind = "blr_conjugate"
c = 2.0
"#;
        let f: EvalFile = toml::from_str(text).unwrap();
        assert_eq!(f.eval.folds, 4);
        assert_eq!(f.eval.methods[1], MethodSpec::BlrConjugate { c: 2.0, intercept_sd: 5.0, inner_folds: 5 });
    }
}
