//! Multi-band rasters, radiometric normalization and 3-band view composition.
//!
//! Bands are identified by their Sentinel-2 label (`"8"` and `"8A"` are
//! different bands), never by position. Normalization maps digital numbers
//! from `[0, 3000]` onto `[0, 255]`, clipping anything outside that range, and
//! keeps the result as `f64`; quantization to bytes only happens on PNG export.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{sidecar_path, ContainerError, Tensor, TensorData};

/// Upper end of the input range mapped onto 255.
pub const NORMALIZE_CEILING: f64 = 3000.0;

/// Sentinel-2 MSI bands: label, common name, central wavelength (nm),
/// native resolution (m). Order follows the mission band table, with
/// Cirrus (10) listed last.
pub const SENTINEL2_BANDS: [(&str, &str, f64, f64); 13] = [
    ("1", "Coastal Aerosol", 443.0, 60.0),
    ("2", "Blue", 494.0, 10.0),
    ("3", "Green", 560.0, 10.0),
    ("4", "Red", 665.0, 10.0),
    ("5", "Red Edge 1", 703.0, 20.0),
    ("6", "Red Edge 2", 740.0, 20.0),
    ("7", "Red Edge 3", 782.0, 20.0),
    ("8", "NIR", 835.0, 10.0),
    ("8A", "NIR Narrow", 864.0, 20.0),
    ("9", "Water Vapour", 945.0, 60.0),
    ("11", "SWIR 1", 1610.0, 20.0),
    ("12", "SWIR 2", 2190.0, 20.0),
    ("10", "Cirrus", 1375.0, 60.0),
];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("band {0} is not present in the raster")]
    MissingBand(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("band {0} listed more than once")]
    DuplicateBand(String),
    #[error("invalid view: {0}")]
    InvalidView(String),
    #[error("invalid band sidecar: {0}")]
    Sidecar(String),
    #[error("png encoding failed: {0}")]
    Png(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A spectral band. Equality and hashing use the label only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandId {
    pub label: String,
    pub wavelength_nm: Option<f64>,
    pub resolution_m: Option<f64>,
}

impl PartialEq for BandId {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
    }
}

impl Eq for BandId {}

impl std::hash::Hash for BandId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.label.hash(state)
    }
}

impl BandId {
    /// Sentinel-2 band with its published metadata, if `label` is one.
    pub fn sentinel2(label: &str) -> Option<BandId> {
        let label = label.trim().trim_start_matches(['B', 'b']);
        let label = if label.eq_ignore_ascii_case("8a") { "8A" } else { label };
        SENTINEL2_BANDS
            .iter()
            .find(|(l, ..)| *l == label)
            .map(|&(l, _, wl, res)| BandId {
                label: l.to_string(),
                wavelength_nm: Some(wl),
                resolution_m: Some(res),
            })
    }

    /// Resolves Sentinel-2 metadata when known; other labels are kept as-is.
    pub fn from_label(label: &str) -> BandId {
        BandId::sentinel2(label).unwrap_or_else(|| BandId {
            label: label.trim().to_string(),
            wavelength_nm: None,
            resolution_m: None,
        })
    }

    pub fn sentinel2_all() -> Vec<BandId> {
        SENTINEL2_BANDS
            .iter()
            .map(|(l, ..)| BandId::sentinel2(l).unwrap())
            .collect()
    }
}

impl std::fmt::Display for BandId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "B{}", self.label)
    }
}

/// A single band at its native resolution, before resampling.
#[derive(Debug, Clone)]
pub struct NativeGrid {
    pub band: BandId,
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

/// Raw multi-band image. All band grids share one `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRaster {
    width: usize,
    height: usize,
    bands: Vec<BandId>,
    data: Vec<u16>,
    pub crs_tag: String,
    /// Image center as (lon, lat) degrees.
    pub origin: (f64, f64),
    pub ground_size_m: f64,
}

impl BandRaster {
    /// `data` is band-major: `bands.len() x height x width`.
    pub fn new(
        width: usize,
        height: usize,
        bands: Vec<BandId>,
        data: Vec<u16>,
    ) -> Result<Self, RasterError> {
        for (i, b) in bands.iter().enumerate() {
            if bands[..i].contains(b) {
                return Err(RasterError::DuplicateBand(b.label.clone()));
            }
        }
        let expected = width * height * bands.len();
        if data.len() != expected {
            return Err(RasterError::ShapeMismatch(format!(
                "{} bands of {width}x{height} need {expected} samples, got {}",
                bands.len(),
                data.len()
            )));
        }
        Ok(BandRaster {
            width,
            height,
            bands,
            data,
            crs_tag: "EPSG:4326".to_string(),
            origin: (0.0, 0.0),
            ground_size_m: 0.0,
        })
    }

    /// Builds a raster from bands at mixed native resolutions, upsampling
    /// every band onto the finest grid with nearest-neighbour lookup.
    pub fn from_native_grids(grids: Vec<NativeGrid>) -> Result<Self, RasterError> {
        let width = grids.iter().map(|g| g.width).max().unwrap_or(0);
        let height = grids.iter().map(|g| g.height).max().unwrap_or(0);
        let mut bands = Vec::with_capacity(grids.len());
        let mut data = Vec::with_capacity(grids.len() * width * height);
        for g in grids {
            if g.data.len() != g.width * g.height || g.width == 0 || g.height == 0 {
                return Err(RasterError::ShapeMismatch(format!(
                    "band {} declares {}x{} but holds {} samples",
                    g.band.label,
                    g.width,
                    g.height,
                    g.data.len()
                )));
            }
            data.extend(resample_nearest(&g.data, g.width, g.height, width, height));
            bands.push(g.band);
        }
        BandRaster::new(width, height, bands, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> &[BandId] {
        &self.bands
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn band(&self, label: &str) -> Option<&[u16]> {
        let plane = self.width * self.height;
        self.bands
            .iter()
            .position(|b| b.label == label)
            .map(|i| &self.data[i * plane..(i + 1) * plane])
    }

    pub fn flip_horizontal(&self) -> BandRaster {
        self.remap(|x, y| (self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> BandRaster {
        self.remap(|x, y| (x, self.height - 1 - y))
    }

    fn remap(&self, src: impl Fn(usize, usize) -> (usize, usize)) -> BandRaster {
        let plane = self.width * self.height;
        let mut data = vec![0u16; self.data.len()];
        for b in 0..self.bands.len() {
            for y in 0..self.height {
                for x in 0..self.width {
                    let (sx, sy) = src(x, y);
                    data[b * plane + y * self.width + x] =
                        self.data[b * plane + sy * self.width + sx];
                }
            }
        }
        BandRaster {
            data,
            ..self.clone()
        }
    }
}

/// Nearest-neighbour resampling of a row-major grid.
pub fn resample_nearest(
    src: &[u16],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<u16> {
    if src_w == dst_w && src_h == dst_h {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        // pixel-center mapping: floor((y + 0.5) * src / dst)
        let sy = (((2 * y + 1) * src_h) / (2 * dst_h)).min(src_h - 1);
        for x in 0..dst_w {
            let sx = (((2 * x + 1) * src_w) / (2 * dst_w)).min(src_w - 1);
            out.push(src[sy * src_w + sx]);
        }
    }
    out
}

/// Clamp to `[0, 3000]` and scale onto `[0, 255]`.
pub fn normalize_value(raw: f64) -> f64 {
    // multiply before dividing so integer inputs map exactly (1500 -> 127.5)
    raw.clamp(0.0, NORMALIZE_CEILING) * 255.0 / NORMALIZE_CEILING
}

pub fn normalize_band(raw: &[u16]) -> Vec<f64> {
    raw.iter().map(|&v| normalize_value(f64::from(v))).collect()
}

/// Round-half-to-even quantization used for 8-bit export.
pub fn quantize(value: f64) -> u8 {
    value.clamp(0.0, 255.0).round_ties_even() as u8
}

/// Three bands rendered as the R, G and B channels of a view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    pub name: String,
    pub triplet: [BandId; 3],
}

impl ViewSpec {
    pub const PRESETS: [&'static str; 4] = ["natural", "false_color", "moisture", "agriculture"];

    pub fn new(name: impl Into<String>, labels: [&str; 3]) -> ViewSpec {
        ViewSpec {
            name: name.into(),
            triplet: labels.map(BandId::from_label),
        }
    }

    pub fn natural() -> ViewSpec {
        ViewSpec::new("natural", ["4", "3", "2"])
    }

    pub fn false_color() -> ViewSpec {
        ViewSpec::new("false_color", ["8", "4", "2"])
    }

    pub fn moisture() -> ViewSpec {
        ViewSpec::new("moisture", ["12", "1", "3"])
    }

    pub fn agriculture() -> ViewSpec {
        ViewSpec::new("agriculture", ["11", "8", "2"])
    }

    pub fn presets() -> Vec<ViewSpec> {
        vec![
            ViewSpec::natural(),
            ViewSpec::false_color(),
            ViewSpec::moisture(),
            ViewSpec::agriculture(),
        ]
    }

    /// Parses a preset name or `custom:<b1,b2,b3>`.
    pub fn parse(s: &str) -> Result<ViewSpec, RasterError> {
        let s = s.trim();
        match s {
            "natural" => Ok(ViewSpec::natural()),
            "false_color" => Ok(ViewSpec::false_color()),
            "moisture" => Ok(ViewSpec::moisture()),
            "agriculture" => Ok(ViewSpec::agriculture()),
            _ => {
                let Some(list) = s.strip_prefix("custom:") else {
                    return Err(RasterError::InvalidView(format!(
                        "unknown view {s:?}; expected one of {} or custom:<b1,b2,b3>",
                        Self::PRESETS.join(", ")
                    )));
                };
                let labels: Vec<&str> = list.split(',').map(str::trim).collect();
                if labels.len() != 3 || labels.iter().any(|l| l.is_empty()) {
                    return Err(RasterError::InvalidView(format!(
                        "custom view needs exactly 3 bands, got {list:?}"
                    )));
                }
                let triplet = [
                    BandId::from_label(labels[0]),
                    BandId::from_label(labels[1]),
                    BandId::from_label(labels[2]),
                ];
                let name = format!(
                    "custom_{}_{}_{}",
                    triplet[0].label, triplet[1].label, triplet[2].label
                );
                Ok(ViewSpec { name, triplet })
            }
        }
    }
}

/// Normalized 3-channel composite, channel-major (`3 x height x width`).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub spec: ViewSpec,
    width: usize,
    height: usize,
    channels: Vec<f64>,
}

impl ViewImage {
    pub fn from_channels(
        spec: ViewSpec,
        width: usize,
        height: usize,
        channels: Vec<f64>,
    ) -> Result<ViewImage, RasterError> {
        if channels.len() != 3 * width * height {
            return Err(RasterError::ShapeMismatch(format!(
                "view {width}x{height} needs {} values, got {}",
                3 * width * height,
                channels.len()
            )));
        }
        Ok(ViewImage {
            spec,
            width,
            height,
            channels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> &[f64] {
        &self.channels
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.channels[k * plane..(k + 1) * plane]
    }

    #[inline]
    pub fn at(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.channels[(channel * self.height + y) * self.width + x]
    }

    /// Interleaved 8-bit RGB, rounded half-to-even.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for k in 0..3 {
                out.push(quantize(self.channels[k * plane + i]));
            }
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![3, self.height, self.width],
            TensorData::F64(self.channels.clone()),
        )
        .expect("view dimensions are consistent")
    }
}

/// Channel `k` of the result is band `v.triplet[k]`, normalized.
pub fn compose_view(r: &BandRaster, v: &ViewSpec) -> Result<ViewImage, RasterError> {
    let plane = r.width * r.height;
    let mut channels = Vec::with_capacity(3 * plane);
    for band in &v.triplet {
        let raw = r
            .band(&band.label)
            .ok_or_else(|| RasterError::MissingBand(band.label.clone()))?;
        if raw.len() != plane {
            return Err(RasterError::ShapeMismatch(format!(
                "band {} has {} samples, raster grid is {}x{}",
                band.label,
                raw.len(),
                r.width,
                r.height
            )));
        }
        channels.extend(raw.iter().map(|&v| normalize_value(f64::from(v))));
    }
    ViewImage::from_channels(v.clone(), r.width, r.height, channels)
}

#[derive(Debug, Serialize, Deserialize)]
struct BandSidecar {
    bands: Vec<String>,
    #[serde(default)]
    crs: Option<String>,
    #[serde(default)]
    origin: Option<(f64, f64)>,
    #[serde(default)]
    ground_size_m: Option<f64>,
}

/// Reads a rank-3 `u16` BTSR file plus its `<name>.bands.json` sidecar.
pub fn load_raster(path: impl AsRef<Path>) -> Result<BandRaster, RasterError> {
    let path = path.as_ref();
    let tensor = Tensor::read(path)?;
    let side_path = sidecar_path(path, "bands.json");
    let side: BandSidecar = serde_json::from_slice(&fs::read(&side_path)?)
        .map_err(|e| RasterError::Sidecar(format!("{}: {e}", side_path.display())))?;
    let dims = tensor.dims().to_vec();
    if dims.len() != 3 {
        return Err(RasterError::ShapeMismatch(format!(
            "raster tensor must be rank 3 (bands, height, width), got rank {}",
            dims.len()
        )));
    }
    if dims[0] != side.bands.len() {
        return Err(RasterError::Sidecar(format!(
            "tensor has {} bands, sidecar lists {}",
            dims[0],
            side.bands.len()
        )));
    }
    let data = match tensor.into_data() {
        TensorData::U16(v) => v,
        TensorData::F64(v) => {
            // accept f64 rasters holding whole non-negative numbers
            let mut out = Vec::with_capacity(v.len());
            for (i, x) in v.into_iter().enumerate() {
                if !(x >= 0.0 && x <= f64::from(u16::MAX) && x.fract() == 0.0) {
                    return Err(RasterError::ShapeMismatch(format!(
                        "sample {i} = {x} is not a valid digital number"
                    )));
                }
                out.push(x as u16);
            }
            out
        }
    };
    let bands = side.bands.iter().map(|l| BandId::from_label(l)).collect();
    let mut raster = BandRaster::new(dims[2], dims[1], bands, data)?;
    if let Some(crs) = side.crs {
        raster.crs_tag = crs;
    }
    if let Some(origin) = side.origin {
        raster.origin = origin;
    }
    if let Some(g) = side.ground_size_m {
        raster.ground_size_m = g;
    }
    Ok(raster)
}

pub fn save_raster(r: &BandRaster, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let tensor = Tensor::new(
        vec![r.bands.len(), r.height, r.width],
        TensorData::U16(r.data.clone()),
    )?;
    tensor.write(path)?;
    let side = BandSidecar {
        bands: r.bands.iter().map(|b| b.label.clone()).collect(),
        crs: Some(r.crs_tag.clone()),
        origin: Some(r.origin),
        ground_size_m: Some(r.ground_size_m),
    };
    let json = serde_json::to_vec_pretty(&side).expect("sidecar serializes");
    fs::write(sidecar_path(path, "bands.json"), json)?;
    Ok(())
}

pub fn write_rgb_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    rgb: &[u8],
) -> Result<(), RasterError> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| RasterError::Png(e.to_string()))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| RasterError::Png(e.to_string()))?;
    writer.finish().map_err(|e| RasterError::Png(e.to_string()))
}

pub fn save_view_png(v: &ViewImage, path: impl AsRef<Path>) -> Result<(), RasterError> {
    write_rgb_png(path, v.width, v.height, &v.to_rgb8())
}

pub fn save_view_btsr(v: &ViewImage, path: impl AsRef<Path>) -> Result<(), RasterError> {
    v.to_tensor().write(path)?;
    Ok(())
}
