use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvuq_cli::config::{EvalFile, PipelineConfig, PriorName};
use mvuq_cli::io::{align_targets, create_dir, load_raster_dir, read_points, read_targets, write_predictions};
use mvuq_cli::pipeline::{run, write_report_csv};
use mvuq_cli::provenance::{hash_json, Provenance};
use mvuq_cli::stages::{self, KrigeOutputs};
use mvuq_cli::CliError;
use mvuq_core::bayes::{BlrPriorConfig, McmcConfig, PriorKind};
use mvuq_core::featurize::FeatureMatrix;
use mvuq_core::geoviz::{GridSpec, ScatterField};
use mvuq_core::raster::ViewSpec;
use mvuq_core::regress::default_alpha_grid;
use mvuq_core::uqmetrics::{evaluate_pipeline, HarnessData};

#[derive(Parser)]
#[command(name = "mvuq", version, about = "Multi-view satellite feature regression with predictive uncertainty")]
struct Cli {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true, env = "MVUQ_SEED")]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true, env = "MVUQ_JOBS")]
    jobs: Option<usize>,
    /// Log info messages as well as warnings.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compose one view of a raster into a BTSR or PNG image.
    Compose {
        #[arg(long)]
        input: PathBuf,
        /// natural, false_color, moisture, agriculture or custom:<b1,b2,b3>
        #[arg(long)]
        view: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random convolutional features for every raster in a directory.
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "natural,false_color,moisture,agriculture")]
        views: Vec<String>,
        #[arg(long, default_value_t = 512)]
        filters: usize,
        #[arg(long, default_value_t = 3)]
        patch_size: usize,
        #[arg(long)]
        stride: Option<usize>,
        /// Keep biases at zero instead of sampling them from the first image.
        #[arg(long)]
        no_calibrate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate per-view feature files column-wise.
    Fuse {
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ridge regression with the penalty chosen by K-fold CV.
    FitRidge {
        #[command(flatten)]
        data: DataArgs,
        /// `default` or a comma-separated list of penalties.
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Heteroscedastic Gaussian regression.
    FitHetero {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write in-sample predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Bayesian linear regression, sampled or conjugate.
    FitBlr(FitBlrArgs),
    /// Predict from a saved model or posterior.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated scoring of several methods and view subsets.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat CSV copy of the report; defaults to the JSON path with `.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Ordinary kriging of point values onto a grid.
    Krige {
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value = "mu")]
        value_col: String,
        /// lon0,lat0,lon1,lat1
        #[arg(long, allow_hyphen_values = true)]
        bbox: String,
        #[arg(long)]
        res_km: f64,
        #[arg(long, default_value_t = 15)]
        n_bins: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
        #[arg(long)]
        markers: Option<PathBuf>,
    },
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without reading any payload data.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    features: PathBuf,
    /// CSV with `location_id` and `target` columns.
    #[arg(long)]
    targets: PathBuf,
}

#[derive(Args)]
struct FitBlrArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "half_t")]
    prior: PriorName,
    #[arg(long, default_value_t = 3.0)]
    nu: f64,
    /// Prior variance for the Gaussian prior.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 2.0)]
    slab_scale: f64,
    #[arg(long, default_value_t = 5.0)]
    intercept_sd: f64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    /// Iterations per chain, warm-up included.
    #[arg(long, default_value_t = 1500)]
    draws: usize,
    #[arg(long, default_value_t = 500)]
    warmup: usize,
    /// Closed-form Gaussian posterior with a plug-in noise variance,
    /// written as JSON.
    #[arg(long)]
    conjugate: bool,
    #[arg(long, default_value_t = 5)]
    inner_folds: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    diag: Option<PathBuf>,
}

fn load_data(data: &DataArgs) -> Result<(FeatureMatrix, Vec<f64>), CliError> {
    if !data.features.is_file() {
        return Err(CliError::config(format!("feature file not found: {}", data.features.display())));
    }
    let m = stages::load_features(&[&data.features])?.remove(0);
    let y = align_targets(m.row_ids(), &read_targets(&data.targets)?)?;
    Ok((m, y))
}

fn parse_grid(grid: &str) -> Result<Vec<f64>, CliError> {
    if grid == "default" {
        return Ok(default_alpha_grid());
    }
    grid.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::config(format!("grid value {s:?}: {e}"))))
        .collect()
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    let args_hash = hash_json(&std::env::args().skip(1).collect::<Vec<_>>());
    let prov = |stage: &str| Provenance::new(stage, seed, args_hash.clone());
    match cli.command {
        Command::Compose { input, view, out } => {
            ensure_parent(&out)?;
            stages::compose(&input, &view, &out)
        }
        Command::Featurize { input, views, filters, patch_size, stride, no_calibrate, out } => {
            let specs: Vec<ViewSpec> = views
                .iter()
                .map(|v| ViewSpec::parse(v).map_err(|e| CliError::config(format!("view {v:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if !input.is_dir() {
                return Err(CliError::config(format!("raster directory not found: {}", input.display())));
            }
            let params = mvuq_cli::config::FeaturizeSection {
                views,
                filters,
                patch_size,
                stride,
                calibrate: !no_calibrate,
            };
            let rasters = load_raster_dir(&input)?;
            create_dir(&out)?;
            for m in stages::featurize_views(&rasters, &specs, &params, seed)? {
                stages::save_features(&m, &out.join(format!("{}.fmx", m.view_name)))?;
            }
            Ok(())
        }
        Command::Fuse { inputs, out } => {
            let views = stages::load_features(&inputs)?;
            ensure_parent(&out)?;
            stages::save_features(&stages::fuse(&views)?, &out)
        }
        Command::FitRidge { data, grid, folds, out, report } => {
            let grid = parse_grid(&grid)?;
            if folds < 2 {
                return Err(CliError::config("--folds must be at least 2"));
            }
            let (m, y) = load_data(&data)?;
            let (model, cv) = stages::fit_ridge(&m, &y, &grid, folds, seed)?;
            ensure_parent(&out)?;
            stages::write_model(&out, &prov("fit"), &model)?;
            if let Some(r) = report {
                stages::write_json(&r, &prov("fit"), &cv, "fit")?;
            }
            Ok(())
        }
        Command::FitHetero { data, lr, epochs, out, predictions } => {
            let (m, y) = load_data(&data)?;
            let model = stages::fit_hetero_model(&m, &y, lr, epochs)?;
            ensure_parent(&out)?;
            stages::write_model(&out, &prov("fit"), &model)?;
            if let Some(p) = predictions {
                write_predictions(&p, &prov("predict"), m.row_ids(), m.coords.as_deref(), &model.predict(&m)?)?;
            }
            Ok(())
        }
        Command::FitBlr(a) => {
            let (m, y) = load_data(&a.data)?;
            ensure_parent(&a.out)?;
            if a.conjugate {
                let model = stages::fit_conjugate(&m, &y, a.c, a.intercept_sd, a.inner_folds, seed)?;
                return stages::write_model(&a.out, &prov("fit"), &model);
            }
            let kind = match a.prior {
                PriorName::GaussianRidge => PriorKind::GaussianRidge { c: a.c },
                PriorName::HalfT => PriorKind::HalfT { nu: a.nu },
                PriorName::RegularizedHorseshoe => PriorKind::RegularizedHorseshoe { nu: a.nu, slab_scale: a.slab_scale },
            };
            let prior = BlrPriorConfig { kind, intercept_sd: a.intercept_sd };
            if a.warmup >= a.draws || a.chains == 0 {
                return Err(CliError::config("need chains >= 1 and warmup < draws"));
            }
            let mcmc = McmcConfig { chains: a.chains, draws: a.draws, warmup: a.warmup, seed, ..McmcConfig::default() };
            let (draws, diag) = stages::fit_mcmc(&m, &y, &prior, &mcmc)?;
            stages::write_draws(&a.out, &prov("fit"), &draws)?;
            if let Some(d) = a.diag {
                stages::write_json(&d, &prov("fit"), &diag, "fit")?;
            }
            Ok(())
        }
        Command::Predict { model, features, out } => {
            if !features.is_file() {
                return Err(CliError::config(format!("feature file not found: {}", features.display())));
            }
            let m = stages::load_features(&[&features])?.remove(0);
            let pred = stages::predict_file(&model, &m, seed)?;
            ensure_parent(&out)?;
            write_predictions(&out, &prov("predict"), m.row_ids(), m.coords.as_deref(), &pred)
        }
        Command::Evaluate { config, out, csv } => {
            let mut file = EvalFile::load(&config)?;
            if let Some(s) = cli.seed {
                file.eval.seed = s;
            }
            let views = stages::load_features(&file.features)?;
            if views.is_empty() {
                return Err(CliError::config("evaluate: no feature files"));
            }
            for v in &views[1..] {
                if v.row_ids() != views[0].row_ids() {
                    return Err(CliError::config(format!(
                        "{} and {} list different locations",
                        v.view_name, views[0].view_name
                    )));
                }
            }
            let targets = align_targets(views[0].row_ids(), &read_targets(&file.targets)?)?;
            let report = evaluate_pipeline(&HarnessData { views, targets }, &file.eval).map_err(|e| match e {
                mvuq_core::uqmetrics::UqError::Config(m) => CliError::Config(m),
                other => CliError::stage("evaluate", other),
            })?;
            let p = Provenance::new("evaluate", file.eval.seed, hash_json(&file.eval));
            ensure_parent(&out)?;
            stages::write_json(&out, &p, &report, "evaluate")?;
            write_report_csv(&csv.unwrap_or_else(|| out.with_extension("csv")), &p, &report)
        }
        Command::Krige { points, value_col, bbox, res_km, n_bins, out, png, markers } => {
            let spec = GridSpec::parse_bbox(&bbox, res_km).map_err(CliError::config)?;
            let (pts, vals) = read_points(&points, &value_col)?;
            let field = ScatterField::new(pts, vals, stages::field_kind(&value_col)).map_err(CliError::config)?;
            for p in [Some(&out), png.as_ref(), markers.as_ref()].into_iter().flatten() {
                ensure_parent(p)?;
            }
            let outputs = KrigeOutputs { grid: &out, png: png.as_deref(), markers: markers.as_deref() };
            stages::krige_points(&field, &spec, n_bins, &prov("krige"), &outputs).map(|_| ())
        }
        Command::Run { config, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            let summary = run(&cfg)?;
            println!("wrote {} artifacts to {}", summary.artifacts.len(), cfg.output.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = PipelineConfig::load(&config)?;
            for w in cfg.validate()? {
                println!("warning: {w}");
            }
            println!("ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
