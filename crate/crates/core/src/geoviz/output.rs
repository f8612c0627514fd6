use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{GeoError, GridSpec, KrigedGrid, ScatterField};
use crate::container::{sidecar_path, Tensor, TensorData};
use crate::raster::write_rgb_png;

/// Nine evenly spaced stops of the viridis colour map.
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

/// Colour for `t` in `[0, 1]`, linearly interpolated between stops.
pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (VIRIDIS[i][c] + f * (VIRIDIS[i + 1][c] - VIRIDIS[i][c])).round_ties_even() as u8;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub layer: String,
    pub vmin: f64,
    pub vmax: f64,
    pub colormap: String,
    pub stops: Vec<[u8; 3]>,
}

/// Row-major `values` (row 0 at the top) as an RGB PNG scaled to the data
/// range, plus a `<name>.legend.json` sidecar.
pub fn write_heatmap_png(
    values: &[f64],
    nx: usize,
    ny: usize,
    layer: &str,
    path: impl AsRef<Path>,
) -> Result<Legend, GeoError> {
    let path = path.as_ref();
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = vmax - vmin;
    let rgb: Vec<u8> = values
        .iter()
        .flat_map(|v| viridis(if span > 0.0 { (v - vmin) / span } else { 0.0 }))
        .collect();
    write_rgb_png(path, nx, ny, &rgb)?;
    let legend = Legend {
        layer: layer.to_string(),
        vmin,
        vmax,
        colormap: "viridis".into(),
        stops: (0..VIRIDIS.len()).map(|i| viridis(i as f64 / 8.0)).collect(),
    };
    fs::write(sidecar_path(path, "legend.json"), serde_json::to_vec_pretty(&legend).expect("legend serializes"))?;
    Ok(legend)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub spec: GridSpec,
    pub nx: usize,
    pub ny: usize,
    pub layers: Vec<String>,
}

/// `2 x ny x nx` tensor (estimate, variance) with a `<name>.grid.json`
/// sidecar.
pub fn write_grid_btsr(grid: &KrigedGrid, path: impl AsRef<Path>) -> Result<(), GeoError> {
    let path = path.as_ref();
    let mut data = grid.estimate.clone();
    data.extend_from_slice(&grid.variance);
    Tensor::new(vec![2, grid.ny, grid.nx], TensorData::F64(data))?.write(path)?;
    let meta = GridMeta {
        spec: grid.spec,
        nx: grid.nx,
        ny: grid.ny,
        layers: vec!["estimate".into(), "variance".into()],
    };
    fs::write(sidecar_path(path, "grid.json"), serde_json::to_vec_pretty(&meta).expect("meta serializes"))?;
    Ok(())
}

/// Data locations as a GeoJSON point collection.
pub fn write_markers_geojson(field: &ScatterField, path: impl AsRef<Path>) -> Result<(), GeoError> {
    let features: Vec<_> = field
        .points()
        .iter()
        .zip(field.values())
        .map(|((lon, lat), v)| {
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
                "properties": {"value": v, "kind": field.kind, "marker-color": "#1f77b4"},
            })
        })
        .collect();
    let doc = json!({"type": "FeatureCollection", "features": features});
    fs::write(path, serde_json::to_vec_pretty(&doc).expect("geojson serializes"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoviz::{krige, FieldKind, VariogramModel};

    #[test]
    fn colormap_endpoints() {
        assert_eq!(viridis(0.0), [68, 1, 84]);
        assert_eq!(viridis(1.0), [253, 231, 37]);
        assert_eq!(viridis(0.5), [33, 144, 141]);
        assert_eq!(viridis(f64::NAN), viridis(0.0));
    }

    #[test]
    fn writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let f = ScatterField::new(vec![(0.0, 0.0), (0.2, 0.1)], vec![1.0, 3.0], FieldKind::PosteriorMean).unwrap();
        let m = VariogramModel::exponential(0.0, 1.0, 20.0);
        let spec = GridSpec { lon0: 0.0, lat0: 0.0, lon1: 0.3, lat1: 0.2, res_km: 5.0 };
        let g = krige(&f, &m, &spec).unwrap();
        write_grid_btsr(&g, dir.path().join("grid.btsr")).unwrap();
        let t = Tensor::read(dir.path().join("grid.btsr")).unwrap();
        assert_eq!(t.dims(), &[2, g.ny, g.nx]);
        let legend = write_heatmap_png(&g.estimate, g.nx, g.ny, "estimate", dir.path().join("grid.png")).unwrap();
        assert!(legend.vmin >= 1.0 - 1e-9 && legend.vmax <= 3.0 + 1e-9);
        assert!(dir.path().join("grid.legend.json").exists());
        write_markers_geojson(&f, dir.path().join("points.geojson")).unwrap();
        let doc: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("points.geojson")).unwrap()).unwrap();
        assert_eq!(doc["features"].as_array().unwrap().len(), 2);
        assert_eq!(doc["features"][1]["geometry"]["coordinates"][0], 0.2);
    }
}
