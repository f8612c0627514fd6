//! Per-view feature extraction and multi-view fusion.
//!
//! Each composed view is turned into one feature row per location, either by
//! the built-in random convolutional featurizer or by importing embeddings
//! exported elsewhere in the FMX format. Per-view matrices are then
//! concatenated column-wise into the fused representation.

mod conv;
mod fmx;
mod head;

pub use conv::RandomConvFeaturizer;
pub use fmx::{encode_fmx, import_features, import_features_with_manifest, write_features, FmxManifest};
pub use head::{apply_head_residual, fit_linear_head, HeadConfig, LinearHead, LossKind};

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than the {patch}x{patch} patch")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("checksum mismatch: header says {expected:#018x}, payload hashes to {actual:#018x}")]
    ChecksumMismatch { expected: u64, actual: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row count mismatch: {0}")]
    RowCountMismatch(String),
    #[error("location manifests disagree: {0}")]
    ManifestMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear head diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RandomConv,
    Imported,
}

/// Column range of one view inside a fused matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewBlock {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl ViewBlock {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Location-by-feature matrix. Row `i` belongs to `row_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
    pub provenance: Provenance,
    pub view_name: String,
    row_ids: Vec<String>,
    /// Optional (lon, lat) per row, carried through for mapping.
    pub coords: Option<Vec<(f64, f64)>>,
    blocks: Vec<ViewBlock>,
}

impl FeatureMatrix {
    /// `values` is row-major `n x d`.
    pub fn new(
        values: Vec<f64>,
        n: usize,
        d: usize,
        row_ids: Vec<String>,
        view_name: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self, FeatureError> {
        if d == 0 {
            return Err(FeatureError::DimensionMismatch(
                "feature dimension must be positive".into(),
            ));
        }
        if values.len() != n * d {
            return Err(FeatureError::DimensionMismatch(format!(
                "{n}x{d} matrix needs {} values, got {}",
                n * d,
                values.len()
            )));
        }
        if row_ids.len() != n {
            return Err(FeatureError::ManifestMismatch(format!(
                "{} location ids for {n} rows",
                row_ids.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteValue {
                row: pos / d,
                col: pos % d,
            });
        }
        let view_name = view_name.into();
        let blocks = vec![ViewBlock {
            name: view_name.clone(),
            start: 0,
            end: d,
        }];
        Ok(FeatureMatrix {
            n,
            d,
            values,
            provenance,
            view_name,
            row_ids,
            coords: None,
            blocks,
        })
    }

    /// Convenience constructor with ids `"0".."n-1"`.
    pub fn from_rows(rows: &[Vec<f64>], view_name: &str) -> Result<Self, FeatureError> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(FeatureError::DimensionMismatch("ragged rows".into()));
        }
        let ids = (0..n).map(|i| i.to_string()).collect();
        FeatureMatrix::new(rows.concat(), n, d, ids, view_name, Provenance::RandomConv)
    }

    pub fn from_matrix(
        m: &DMatrix<f64>,
        row_ids: Vec<String>,
        view_name: &str,
        provenance: Provenance,
    ) -> Result<Self, FeatureError> {
        let values = m.transpose().as_slice().to_vec();
        FeatureMatrix::new(values, m.nrows(), m.ncols(), row_ids, view_name, provenance)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn blocks(&self) -> &[ViewBlock] {
        &self.blocks
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.values)
    }

    pub fn with_coords(mut self, coords: Vec<(f64, f64)>) -> Result<Self, FeatureError> {
        if coords.len() != self.n {
            return Err(FeatureError::ManifestMismatch(format!(
                "{} coordinates for {} rows",
                coords.len(),
                self.n
            )));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub(crate) fn set_blocks(&mut self, blocks: Vec<ViewBlock>) -> Result<(), FeatureError> {
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end <= b.start {
                return Err(FeatureError::DimensionMismatch(format!(
                    "view blocks must tile the columns, got {blocks:?}"
                )));
            }
            next = b.end;
        }
        if next != self.d {
            return Err(FeatureError::DimensionMismatch(format!(
                "view blocks cover {next} of {} columns",
                self.d
            )));
        }
        self.blocks = blocks;
        Ok(())
    }
}

/// Column-wise concatenation in argument order.
pub fn fuse_views(views: &[&FeatureMatrix]) -> Result<FeatureMatrix, FeatureError> {
    let first = views
        .first()
        .ok_or_else(|| FeatureError::InvalidArgument("no views to fuse".into()))?;
    let n = first.n;
    for v in &views[1..] {
        if v.n != n {
            return Err(FeatureError::RowCountMismatch(format!(
                "view {} has {} rows, view {} has {n}",
                v.view_name, v.n, first.view_name
            )));
        }
        if v.row_ids != first.row_ids {
            let at = v
                .row_ids
                .iter()
                .zip(&first.row_ids)
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            return Err(FeatureError::ManifestMismatch(format!(
                "view {} row {at} is {:?}, view {} has {:?}",
                v.view_name, v.row_ids[at], first.view_name, first.row_ids[at]
            )));
        }
    }
    if views.len() == 1 {
        return Ok((*first).clone());
    }

    let d: usize = views.iter().map(|v| v.d).sum();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        for v in views {
            values.extend_from_slice(v.row(i));
        }
    }
    let mut blocks = Vec::new();
    let mut start = 0;
    for v in views {
        for b in &v.blocks {
            blocks.push(ViewBlock {
                name: b.name.clone(),
                start: start + b.start,
                end: start + b.end,
            });
        }
        start += v.d;
    }
    let provenance = if views.iter().all(|v| v.provenance == Provenance::RandomConv) {
        Provenance::RandomConv
    } else {
        Provenance::Imported
    };
    let mut fused = FeatureMatrix::new(values, n, d, first.row_ids.clone(), "fused", provenance)?;
    fused.coords = views.iter().find_map(|v| v.coords.clone());
    fused.set_blocks(blocks)?;
    Ok(fused)
}
