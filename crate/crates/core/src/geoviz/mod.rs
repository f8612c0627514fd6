//! Ordinary kriging of scattered point values onto a lon/lat grid, with an
//! exponential variogram fitted to the data.

mod output;

pub use output::{viridis, write_grid_btsr, write_heatmap_png, write_markers_geojson, GridMeta, Legend};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const NEIGHBOURS: usize = 32;
pub const MIN_VARIOGRAM_POINTS: usize = 10;
/// Sill of the nugget-only model used for constant fields.
pub const DEGENERATE_SILL: f64 = 1e-12;
const JITTER: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("{0} points, need at least {MIN_VARIOGRAM_POINTS}")]
    TooFewPoints(usize),
    #[error("singular kriging system")]
    SingularKrigingSystem,
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Target,
    PosteriorMean,
    PosteriorVariance,
}

/// Great-circle distance in km between `(lon, lat)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterField {
    points: Vec<(f64, f64)>,
    values: Vec<f64>,
    pub kind: FieldKind,
}

impl ScatterField {
    /// Points sharing exact coordinates are merged into their mean value.
    pub fn new(points: Vec<(f64, f64)>, values: Vec<f64>, kind: FieldKind) -> Result<Self, GeoError> {
        if points.len() != values.len() {
            return Err(GeoError::InvalidField(format!("{} points, {} values", points.len(), values.len())));
        }
        if points.is_empty() {
            return Err(GeoError::InvalidField("no points".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(GeoError::InvalidField("non-finite coordinate or value".into()));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a].0.total_cmp(&points[b].0).then(points[a].1.total_cmp(&points[b].1))
        });
        let mut merged_pts: Vec<(f64, f64)> = Vec::new();
        let mut merged_vals: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut first_index: Vec<usize> = Vec::new();
        for i in order {
            if merged_pts.last() == Some(&points[i]) {
                let k = merged_pts.len() - 1;
                if merged_vals[k] / counts[k] as f64 != values[i] {
                    log::warn!("duplicate point {:?} with differing values; averaging", points[i]);
                }
                merged_vals[k] += values[i];
                counts[k] += 1;
                first_index[k] = first_index[k].min(i);
            } else {
                merged_pts.push(points[i]);
                merged_vals.push(values[i]);
                counts.push(1);
                first_index.push(i);
            }
        }
        // restore input order of first occurrences
        let mut idx: Vec<usize> = (0..merged_pts.len()).collect();
        idx.sort_by_key(|&k| first_index[k]);
        Ok(ScatterField {
            points: idx.iter().map(|&k| merged_pts[k]).collect(),
            values: idx.iter().map(|&k| merged_vals[k] / counts[k] as f64).collect(),
            kind,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Exponential model `gamma(h) = nugget + (sill - nugget)(1 - exp(-h / range))`
/// for `h > 0`, `gamma(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range_km: f64,
    /// Set for the nugget-only model of a constant field.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramKind {
    Exponential,
}

impl VariogramModel {
    pub fn exponential(nugget: f64, sill: f64, range_km: f64) -> Self {
        VariogramModel {
            kind: VariogramKind::Exponential,
            nugget,
            sill,
            range_km,
            degenerate: false,
        }
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.nugget + (self.sill - self.nugget) * (1.0 - (-h / self.range_km).exp())
        }
    }

    pub fn covariance(&self, h: f64) -> f64 {
        self.sill - self.gamma(h)
    }
}

/// Empirical semivariogram: `(mean distance, mean semivariance, pair count)`
/// per non-empty bin, up to half the largest pair distance.
pub fn empirical_variogram(field: &ScatterField, n_bins: usize) -> Vec<(f64, f64, usize)> {
    let pts = field.points();
    let vals = field.values();
    let mut pairs = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            pairs.push((haversine_km(pts[i], pts[j]), 0.5 * (vals[i] - vals[j]).powi(2)));
        }
    }
    let cutoff = pairs.iter().map(|p| p.0).fold(0.0, f64::max) / 2.0;
    let width = cutoff / n_bins as f64;
    let mut bins = vec![(0.0, 0.0, 0usize); n_bins];
    for (h, g) in pairs {
        if h > 0.0 && h <= cutoff {
            let b = ((h / width) as usize).min(n_bins - 1);
            bins[b].0 += h;
            bins[b].1 += g;
            bins[b].2 += 1;
        }
    }
    bins.into_iter()
        .filter(|b| b.2 > 0)
        .map(|(h, g, c)| (h / c as f64, g / c as f64, c))
        .collect()
}

/// Count-weighted least squares for `(nugget, partial sill)` at one range,
/// both constrained to be non-negative. Returns `(nugget, psill, sse)`.
fn fit_at_range(bins: &[(f64, f64, usize)], range: f64) -> (f64, f64, f64) {
    let basis: Vec<f64> = bins.iter().map(|b| 1.0 - (-b.0 / range).exp()).collect();
    let (mut sw, mut sf, mut sff, mut sg, mut sfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (b, f) in bins.iter().zip(&basis) {
        let w = b.2 as f64;
        sw += w;
        sf += w * f;
        sff += w * f * f;
        sg += w * b.1;
        sfg += w * f * b.1;
    }
    let det = sw * sff - sf * sf;
    let (mut n0, mut ps) = if det.abs() > 1e-300 {
        ((sg * sff - sf * sfg) / det, (sw * sfg - sf * sg) / det)
    } else {
        (sg / sw, 0.0)
    };
    if n0 < 0.0 {
        n0 = 0.0;
        ps = if sff > 0.0 { (sfg / sff).max(0.0) } else { 0.0 };
    }
    if ps < 0.0 {
        ps = 0.0;
        n0 = (sg / sw).max(0.0);
    }
    let sse = bins
        .iter()
        .zip(&basis)
        .map(|(b, f)| b.2 as f64 * (b.1 - n0 - ps * f).powi(2))
        .sum();
    (n0, ps, sse)
}

/// Fits an exponential variogram: grid search over the range (200 log-spaced
/// values), least squares for nugget and partial sill at each. A field
/// without variance yields a nugget-only model with a tiny sill.
pub fn fit_variogram(field: &ScatterField, n_bins: usize) -> Result<VariogramModel, GeoError> {
    if field.len() < MIN_VARIOGRAM_POINTS {
        return Err(GeoError::TooFewPoints(field.len()));
    }
    let vals = field.values();
    if vals.iter().all(|v| *v == vals[0]) {
        log::warn!("constant field; using a nugget-only variogram");
        return Ok(VariogramModel {
            kind: VariogramKind::Exponential,
            nugget: DEGENERATE_SILL,
            sill: DEGENERATE_SILL,
            range_km: 1.0,
            degenerate: true,
        });
    }
    let bins = empirical_variogram(field, n_bins.max(2));
    let hmax = bins.iter().map(|b| b.0).fold(0.0, f64::max);
    let hmin = bins.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((hmin / 10.0).ln(), (hmax * 5.0).ln());
    let mut best = (f64::INFINITY, 0.0, 0.0, 1.0);
    for k in 0..200 {
        let r = (lo + (hi - lo) * k as f64 / 199.0).exp();
        let (n0, ps, sse) = fit_at_range(&bins, r);
        if sse < best.0 {
            best = (sse, n0, ps, r);
        }
    }
    let (_, nugget, psill, range_km) = best;
    if psill + nugget <= 0.0 {
        return Ok(VariogramModel { degenerate: true, ..VariogramModel::exponential(DEGENERATE_SILL, DEGENERATE_SILL, 1.0) });
    }
    Ok(VariogramModel::exponential(nugget, nugget + psill, range_km))
}

/// Estimate, kriging variance and the weights of the neighbours used.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingSolution {
    pub estimate: f64,
    pub variance: f64,
    pub neighbours: Vec<usize>,
    pub weights: Vec<f64>,
}

fn nearest(field: &ScatterField, target: (f64, f64), k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = field
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (i, haversine_km(*p, target)))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

/// Ordinary kriging at one location from its nearest neighbours. The system
/// is scaled by the sill; a singular system is retried once with jitter.
pub fn krige_point(field: &ScatterField, model: &VariogramModel, target: (f64, f64)) -> Result<KrigingSolution, GeoError> {
    let nb = nearest(field, target, NEIGHBOURS);
    let k = nb.len();
    let pts = field.points();
    let cov = |h: f64| model.covariance(h) / model.sill;
    let mut a = DMatrix::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = cov(haversine_km(pts[nb[i].0], pts[nb[j].0]));
        }
        a[(i, k)] = 1.0;
        a[(k, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    for i in 0..k {
        rhs[i] = cov(nb[i].1);
    }
    rhs[k] = 1.0;
    let solve = |m: &DMatrix<f64>| {
        m.clone()
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
    };
    let sol = match solve(&a) {
        Some(s) => s,
        None => {
            let mut jittered = a.clone();
            for i in 0..k {
                jittered[(i, i)] += JITTER;
            }
            solve(&jittered).ok_or(GeoError::SingularKrigingSystem)?
        }
    };
    let weights: Vec<f64> = sol.iter().take(k).copied().collect();
    let estimate = weights.iter().zip(&nb).map(|(w, (i, _))| w * field.values()[*i]).sum();
    let reduction: f64 = (0..k).map(|i| weights[i] * rhs[i]).sum::<f64>() + sol[k];
    let variance = (model.sill * (1.0 - reduction)).max(0.0);
    Ok(KrigingSolution {
        estimate,
        variance,
        neighbours: nb.iter().map(|p| p.0).collect(),
        weights,
    })
}

/// Lon/lat box and node spacing in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lon0: f64,
    pub lat0: f64,
    pub lon1: f64,
    pub lat1: f64,
    pub res_km: f64,
}

impl GridSpec {
    pub fn parse_bbox(bbox: &str, res_km: f64) -> Result<Self, GeoError> {
        let v: Vec<f64> = bbox
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GeoError::InvalidGrid(format!("bbox {bbox:?}: {e}")))?;
        if v.len() != 4 {
            return Err(GeoError::InvalidGrid(format!("bbox needs 4 numbers, got {bbox:?}")));
        }
        let g = GridSpec { lon0: v[0], lat0: v[1], lon1: v[2], lat1: v[3], res_km };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.lon1 > self.lon0 && self.lat1 > self.lat0) {
            return Err(GeoError::InvalidGrid("bbox must have lon1 > lon0 and lat1 > lat0".into()));
        }
        if !(self.res_km > 0.0 && self.res_km.is_finite()) {
            return Err(GeoError::InvalidGrid(format!("resolution must be positive, got {}", self.res_km)));
        }
        Ok(())
    }

    fn steps(&self) -> (f64, f64) {
        let lat_mid = 0.5 * (self.lat0 + self.lat1);
        let per_deg = std::f64::consts::PI * EARTH_RADIUS_KM / 180.0;
        (self.res_km / (per_deg * lat_mid.to_radians().cos().max(1e-6)), self.res_km / per_deg)
    }

    pub fn shape(&self) -> (usize, usize) {
        let (dx, dy) = self.steps();
        let nx = ((self.lon1 - self.lon0) / dx).ceil().max(1.0) as usize;
        let ny = ((self.lat1 - self.lat0) / dy).ceil().max(1.0) as usize;
        (nx, ny)
    }

    /// Cell centres, row 0 northernmost, row-major.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let (dx, dy) = self.steps();
        let (nx, ny) = self.shape();
        (0..ny)
            .flat_map(|r| (0..nx).map(move |c| (self.lon0 + (c as f64 + 0.5) * dx, self.lat1 - (r as f64 + 0.5) * dy)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigedGrid {
    pub spec: GridSpec,
    pub nx: usize,
    pub ny: usize,
    pub estimate: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Kriges every grid node in parallel.
pub fn krige(field: &ScatterField, model: &VariogramModel, spec: &GridSpec) -> Result<KrigedGrid, GeoError> {
    spec.validate()?;
    let (nx, ny) = spec.shape();
    let sols: Vec<KrigingSolution> = spec
        .nodes()
        .par_iter()
        .map(|p| krige_point(field, model, *p))
        .collect::<Result<_, _>>()?;
    Ok(KrigedGrid {
        spec: *spec,
        nx,
        ny,
        estimate: sols.iter().map(|s| s.estimate).collect(),
        variance: sols.iter().map(|s| s.variance).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn field(points: Vec<(f64, f64)>, values: Vec<f64>) -> ScatterField {
        ScatterField::new(points, values, FieldKind::Target).unwrap()
    }

    #[test]
    fn haversine_reference() {
        // one degree of longitude on the equator
        let d = haversine_km((0.0, 0.0), (1.0, 0.0));
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::PI / 180.0).abs() < 1e-9);
        assert_eq!(haversine_km((10.0, 5.0), (10.0, 5.0)), 0.0);
    }

    #[test]
    fn duplicates_are_averaged() {
        let f = field(vec![(1.0, 1.0), (0.0, 0.0), (1.0, 1.0)], vec![2.0, 5.0, 4.0]);
        assert_eq!(f.points(), &[(1.0, 1.0), (0.0, 0.0)]);
        assert_eq!(f.values(), &[3.0, 5.0]);
        assert!(ScatterField::new(vec![(f64::NAN, 0.0)], vec![1.0], FieldKind::Target).is_err());
    }

    #[test]
    fn exact_interpolation_without_nugget() {
        let mut rng = rng_from_seed(1);
        let pts: Vec<(f64, f64)> = (0..40).map(|_| (rng.random_range(30.0..31.0), rng.random_range(-1.0..0.0))).collect();
        let vals: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let f = field(pts.clone(), vals.clone());
        let m = VariogramModel::exponential(0.0, 2.0, 25.0);
        for (p, v) in pts.iter().zip(&vals) {
            let s = krige_point(&f, &m, *p).unwrap();
            assert!((s.estimate - v).abs() < 1e-8);
            assert!(s.variance < 1e-8);
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_four_points_get_equal_weights() {
        let f = field(vec![(0.1, 0.0), (-0.1, 0.0), (0.0, 0.1), (0.0, -0.1)], vec![1.0, 2.0, 3.0, 4.0]);
        let m = VariogramModel::exponential(0.1, 1.0, 10.0);
        let s = krige_point(&f, &m, (0.0, 0.0)).unwrap();
        for w in &s.weights {
            assert!((w - 0.25).abs() < 1e-8, "{:?}", s.weights);
        }
        assert!((s.estimate - 2.5).abs() < 1e-8);
    }

    #[test]
    fn single_point_fills_grid() {
        let f = field(vec![(0.0, 0.0)], vec![7.0]);
        let m = VariogramModel::exponential(0.0, 1.0, 20.0);
        let near = krige_point(&f, &m, (0.01, 0.0)).unwrap();
        let far = krige_point(&f, &m, (0.5, 0.0)).unwrap();
        assert_eq!(near.estimate, 7.0);
        assert_eq!(far.estimate, 7.0);
        assert!(far.variance > near.variance && near.variance > 0.0);
    }

    #[test]
    fn constant_field_degenerate_model() {
        let pts: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 0.1, (i % 3) as f64 * 0.1)).collect();
        let f = field(pts, vec![4.5; 12]);
        let m = fit_variogram(&f, 10).unwrap();
        assert!(m.degenerate && m.sill <= DEGENERATE_SILL);
        let grid = krige(&f, &m, &GridSpec { lon0: 0.0, lat0: 0.0, lon1: 1.0, lat1: 0.3, res_km: 10.0 }).unwrap();
        assert!(grid.estimate.iter().all(|v| (v - 4.5).abs() < 1e-9));
    }

    #[test]
    fn too_few_points() {
        let f = field((0..5).map(|i| (i as f64, 0.0)).collect(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(fit_variogram(&f, 10), Err(GeoError::TooFewPoints(5))));
    }

    #[test]
    fn recovers_simulated_range() {
        // oracle: Gaussian process with exponential covariance, range 30 km
        let mut rng = rng_from_seed(7);
        let n = 500;
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.8), rng.random_range(0.0..1.8))).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let h = haversine_km(pts[i], pts[j]);
            (-h / 30.0).exp() + if i == j { 1e-9 } else { 0.0 }
        });
        let l = cov.cholesky().unwrap().l();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let vals = (l * z).as_slice().to_vec();
        let m = fit_variogram(&field(pts, vals), 15).unwrap();
        assert!(m.range_km > 15.0 && m.range_km < 60.0, "{m:?}");
        assert!(m.sill >= m.nugget);
    }

    #[test]
    fn grid_weights_sum_to_one_and_variance_nonnegative() {
        let mut rng = rng_from_seed(3);
        let pts: Vec<(f64, f64)> = (0..60).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
        let vals: Vec<f64> = pts.iter().map(|p| p.0 + p.1).collect();
        let f = field(pts, vals);
        let m = fit_variogram(&f, 10).unwrap();
        let spec = GridSpec { lon0: 0.0, lat0: 0.0, lon1: 1.0, lat1: 1.0, res_km: 15.0 };
        for p in spec.nodes() {
            let s = krige_point(&f, &m, p).unwrap();
            assert_eq!(s.weights.len(), NEIGHBOURS);
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(s.variance >= 0.0);
        }
        let g = krige(&f, &m, &spec).unwrap();
        assert_eq!(g.estimate.len(), g.nx * g.ny);
    }

    #[test]
    fn grid_shape_and_orientation() {
        let spec = GridSpec::parse_bbox("0,0,1,0.5", 11.0).unwrap();
        let (nx, ny) = spec.shape();
        assert_eq!((nx, ny), (11, 6));
        let nodes = spec.nodes();
        assert!(nodes[0].1 > nodes[nx].1);
        assert!(GridSpec::parse_bbox("1,0,0,1", 1.0).is_err());
        assert!(GridSpec::parse_bbox("0,0,1", 1.0).is_err());
    }
}
