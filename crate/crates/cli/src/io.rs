//! Tabular inputs and outputs and raster directory loading.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use mvuq_core::dist::PredictiveDistribution;
use mvuq_core::raster::{load_raster, BandRaster};

use crate::error::CliError;
use crate::provenance::Provenance;

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        CliError::config(format!(
            "{}: no column {name:?} (columns: {})",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(", ")
        ))
    })
}

/// Reads a `location_id,target` CSV.
pub fn read_targets(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?.clone();
    let (id, val) = (column(&headers, "location_id", path)?, column(&headers, "target", path)?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let value: f64 = rec[val].parse().map_err(|e| {
            CliError::config(format!("{} record {}: target {:?}: {e}", path.display(), line + 1, &rec[val]))
        })?;
        if !value.is_finite() {
            return Err(CliError::config(format!("{} record {}: non-finite target", path.display(), line + 1)));
        }
        out.push((rec[id].to_string(), value));
    }
    Ok(out)
}

/// Targets in the order of `ids`; every id must be present exactly once.
pub fn align_targets(ids: &[String], targets: &[(String, f64)]) -> Result<Vec<f64>, CliError> {
    let mut map = HashMap::with_capacity(targets.len());
    for (id, v) in targets {
        if map.insert(id.as_str(), *v).is_some() {
            return Err(CliError::config(format!("duplicate target for location {id:?}")));
        }
    }
    ids.iter()
        .map(|id| map.get(id.as_str()).copied().ok_or_else(|| CliError::config(format!("no target for location {id:?}"))))
        .collect()
}

/// Predictive mean per location, with a variance for probabilistic models.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub mu: Vec<f64>,
    pub var: Option<Vec<f64>>,
}

impl Predictions {
    pub fn point(mu: Vec<f64>) -> Self {
        Predictions { mu, var: None }
    }

    pub fn from_dists(dists: &[PredictiveDistribution]) -> Self {
        Predictions {
            mu: dists.iter().map(PredictiveDistribution::mean).collect(),
            var: Some(dists.iter().map(PredictiveDistribution::variance).collect()),
        }
    }
}

/// `location_id,[lon,lat,]mu[,var]` after a provenance comment line.
pub fn write_predictions(
    path: &Path,
    provenance: &Provenance,
    ids: &[String],
    coords: Option<&[(f64, f64)]>,
    pred: &Predictions,
) -> Result<(), CliError> {
    let fail = |e: &dyn std::fmt::Display| CliError::stage("predict", format!("{}: {e}", path.display()));
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["location_id"];
        if coords.is_some() {
            header.extend(["lon", "lat"]);
        }
        header.push("mu");
        if pred.var.is_some() {
            header.push("var");
        }
        w.write_record(&header).map_err(|e| fail(&e))?;
        for (i, mu) in pred.mu.iter().enumerate() {
            let mut rec = vec![ids[i].clone()];
            if let Some(c) = coords {
                rec.push(c[i].0.to_string());
                rec.push(c[i].1.to_string());
            }
            rec.push(mu.to_string());
            if let Some(v) = &pred.var {
                rec.push(v[i].to_string());
            }
            w.write_record(&rec).map_err(|e| fail(&e))?;
        }
        w.flush().map_err(|e| fail(&e))?;
    }
    let mut out = provenance.comment_line().into_bytes();
    out.push(b'\n');
    out.extend(buf);
    fs::write(path, out).map_err(|e| fail(&e))
}

/// Reads `lon`, `lat` and `value_col` from a point CSV.
pub fn read_points(path: &Path, value_col: &str) -> Result<(Vec<(f64, f64)>, Vec<f64>), CliError> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?.clone();
    let cols = [column(&headers, "lon", path)?, column(&headers, "lat", path)?, column(&headers, value_col, path)?];
    let (mut pts, mut vals) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut f = [0.0; 3];
        for (k, &c) in cols.iter().enumerate() {
            f[k] = rec[c].parse().map_err(|e| {
                CliError::config(format!("{} record {}: {:?}: {e}", path.display(), line + 1, &rec[c]))
            })?;
        }
        pts.push((f[0], f[1]));
        vals.push(f[2]);
    }
    Ok((pts, vals))
}

/// `*.btsr` files in `dir`, sorted by file name.
pub fn raster_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "btsr"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::config(format!("{}: no .btsr rasters", dir.display())));
    }
    Ok(files)
}

/// Location id of a raster file: its stem.
pub fn location_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_raster_dir(dir: &Path) -> Result<Vec<(String, BandRaster)>, CliError> {
    raster_files(dir)?
        .iter()
        .map(|p| {
            load_raster(p)
                .map(|r| (location_id(p), r))
                .map_err(|e| CliError::stage("compose", format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::stage("output", format!("{}: {e}", path.display())))
}
