#![allow(dead_code)]

use std::fs;
use std::path::Path;

use mvuq_core::featurize::{write_features, FeatureMatrix};
use mvuq_core::linalg::rng_from_seed;
use mvuq_core::raster::{save_raster, BandId, BandRaster};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Band label carrying each component of the planted signal.
pub const SIGNAL_BANDS: [&str; 3] = ["4", "12", "11"];

/// 13-band rasters whose target is the sum of three band levels, each band
/// visible to a different subset of the preset views. Other bands hold
/// independent nuisance levels. Returns ids, rasters and targets.
pub fn planted_rasters(n: usize, size: usize, seed: u64) -> (Vec<(String, BandRaster)>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let bands = BandId::sentinel2_all();
    let mut out = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let levels: Vec<f64> = bands.iter().map(|_| rng.random_range(300.0..2700.0)).collect();
        let mut data = Vec::with_capacity(bands.len() * size * size);
        for level in &levels {
            for _ in 0..size * size {
                data.push((level + 80.0 * normal(&mut rng)).clamp(0.0, 4095.0).round() as u16);
            }
        }
        let signal: f64 = SIGNAL_BANDS
            .iter()
            .map(|l| {
                let k = bands.iter().position(|b| b.label == *l).unwrap();
                (levels[k] - 1500.0) / 700.0
            })
            .sum();
        targets.push(signal + 0.1 * normal(&mut rng));
        let mut r = BandRaster::new(size, size, bands.clone(), data).unwrap();
        r.origin = (36.0 + rng.random_range(0.0..1.0), -1.5 + rng.random_range(0.0..1.0));
        r.ground_size_m = 10.0 * size as f64;
        out.push((format!("loc{i:04}"), r));
    }
    (out, targets)
}

pub fn write_raster_dir(dir: &Path, rasters: &[(String, BandRaster)]) {
    fs::create_dir_all(dir).unwrap();
    for (id, r) in rasters {
        save_raster(r, dir.join(format!("{id}.btsr"))).unwrap();
    }
}

pub fn write_targets(path: &Path, ids: &[String], y: &[f64]) {
    let mut text = String::from("location_id,target\n");
    for (id, v) in ids.iter().zip(y) {
        text.push_str(&format!("{id},{v}\n"));
    }
    fs::write(path, text).unwrap();
}

/// A linear-Gaussian feature set written as FMX with coordinates, plus
/// matching targets. Returns the ids.
pub fn write_linear_fixture(dir: &Path, name: &str, n: usize, d: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] - 0.5 * r[d - 1] + 0.3 * normal(&mut rng)).collect();
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
    let m = FeatureMatrix::from_rows(&rows, name).unwrap().with_coords(coords).unwrap();
    write_features(&m, dir.join(format!("{name}.fmx"))).unwrap();
    let ids = m.row_ids().to_vec();
    write_targets(&dir.join("targets.csv"), &ids, &y);
    ids
}
