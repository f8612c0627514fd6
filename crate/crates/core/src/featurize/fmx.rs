//! `FMX v1` feature interchange files.
//!
//! ```text
//! "FMX1" | u32 version = 1 | u64 n | u64 d | u8 dtype = 0 (f64)
//!        | u64 xxhash64(payload, seed 0) | n x d f64 payload, row-major
//! ```
//!
//! The sidecar `<name>.manifest.json` lists location ids in row order and the
//! view name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use super::{FeatureError, FeatureMatrix, Provenance, ViewBlock};
use crate::container::{sidecar_path, ByteReader, ContainerError};

pub const FMX_MAGIC: &[u8; 4] = b"FMX1";
pub const FMX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmxManifest {
    pub view: String,
    pub locations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<ViewBlock>>,
    /// How the exporter pooled patch embeddings, when it was not us.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
}

/// Raw FMX bytes for an `n x d` payload; no finiteness check.
pub fn encode_fmx(n: usize, d: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), n * d, "payload does not match n x d");
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut out = Vec::with_capacity(33 + payload.len());
    out.extend_from_slice(FMX_MAGIC);
    out.extend_from_slice(&FMX_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.push(0);
    out.extend_from_slice(&XxHash64::oneshot(0, &payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    fs::write(path, encode_fmx(m.n(), m.d(), m.values()))?;
    let manifest = FmxManifest {
        view: m.view_name.clone(),
        locations: m.row_ids().to_vec(),
        coordinates: m.coords.clone(),
        blocks: (m.blocks().len() > 1).then(|| m.blocks().to_vec()),
        pooling: None,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(sidecar_path(path, "manifest.json"), json)?;
    Ok(())
}

fn decode_fmx(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), FeatureError> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != FMX_MAGIC {
        return Err(ContainerError::format(0, "bad magic, expected \"FMX1\"").into());
    }
    let version = r.u32()?;
    if version != FMX_VERSION {
        return Err(ContainerError::format(4, format!("unsupported version {version}")).into());
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let dtype = r.u8()?;
    if dtype != 0 {
        return Err(ContainerError::format(24, format!("dtype {dtype} is not f64 (0)")).into());
    }
    let expected = r.u64()?;
    let payload_at = r.offset();
    let count = n
        .checked_mul(d)
        .ok_or_else(|| ContainerError::format(8, "n x d overflows"))?;
    let payload_len = bytes.len() - payload_at;
    if payload_len != count * 8 {
        return Err(ContainerError::format(
            payload_at,
            format!(
                "header declares {n}x{d} ({} bytes) but payload holds {payload_len} bytes",
                count * 8
            ),
        )
        .into());
    }
    let actual = XxHash64::oneshot(0, &bytes[payload_at..]);
    if actual != expected {
        return Err(FeatureError::ChecksumMismatch { expected, actual });
    }
    let values = r.f64s(count)?;
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::NonFiniteValue {
            row: pos / d,
            col: pos % d,
        });
    }
    Ok((n, d, values))
}

/// Loads an FMX file and its `<name>.manifest.json` sidecar. Without a
/// sidecar, rows are numbered and the view is named after the file.
pub fn import_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, FeatureError> {
    let path = path.as_ref();
    let side = sidecar_path(path, "manifest.json");
    let manifest = if side.exists() {
        Some(read_manifest(&side)?)
    } else {
        None
    };
    build(path, manifest)
}

pub fn import_features_with_manifest(
    path: impl AsRef<Path>,
    manifest: impl AsRef<Path>,
) -> Result<FeatureMatrix, FeatureError> {
    let manifest = read_manifest(manifest.as_ref())?;
    build(path.as_ref(), Some(manifest))
}

fn read_manifest(path: &Path) -> Result<FmxManifest, FeatureError> {
    serde_json::from_slice(&fs::read(path)?).map_err(|e| {
        FeatureError::ManifestMismatch(format!("unreadable manifest {}: {e}", path.display()))
    })
}

fn build(path: &Path, manifest: Option<FmxManifest>) -> Result<FeatureMatrix, FeatureError> {
    let (n, d, values) = decode_fmx(&fs::read(path)?)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "imported".into());
    let (ids, view, coords, blocks) = match manifest {
        Some(m) => (m.locations, m.view, m.coordinates, m.blocks),
        None => ((0..n).map(|i| i.to_string()).collect(), stem, None, None),
    };
    if ids.len() != n {
        return Err(FeatureError::ManifestMismatch(format!(
            "manifest lists {} locations, file holds {n} rows",
            ids.len()
        )));
    }
    let mut m = FeatureMatrix::new(values, n, d, ids, view, Provenance::Imported)?;
    if let Some(c) = coords {
        m = m.with_coords(c)?;
    }
    if let Some(b) = blocks {
        m.set_blocks(b)?;
    }
    Ok(m)
}
