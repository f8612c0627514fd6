//! The `BTSR v1` tensor container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BTSR" | u32 version = 1 | u32 rank | rank x u64 dims | u8 dtype | payload
//! ```
//!
//! `dtype` is `0` for `f64` and `1` for `u16`; the payload is row-major.
//! Rasters are stored as rank-3 `(bands, height, width)` tensors, posterior
//! draws as `(chains, kept, params)` and kriged grids as `(2, rows, cols)`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const BTSR_MAGIC: &[u8; 4] = b"BTSR";
pub const BTSR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ContainerError {
    pub(crate) fn format(offset: usize, reason: impl Into<String>) -> Self {
        ContainerError::Format {
            offset: offset as u64,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U16(Vec<u16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::U16(_) => 1,
        }
    }
}

/// A dense row-major tensor as stored in a BTSR file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, ContainerError> {
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        match expected {
            Some(n) if n == data.len() => Ok(Tensor { dims, data }),
            _ => Err(ContainerError::format(
                0,
                format!("dims {:?} do not match payload of {} values", dims, data.len()),
            )),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let width = match self.data {
            TensorData::F64(_) => 8,
            TensorData::U16(_) => 2,
        };
        let mut out = Vec::with_capacity(13 + 8 * self.dims.len() + width * self.data.len());
        out.extend_from_slice(BTSR_MAGIC);
        out.extend_from_slice(&BTSR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(self.data.dtype());
        match &self.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != BTSR_MAGIC {
            return Err(ContainerError::format(0, "bad magic, expected \"BTSR\""));
        }
        let version_at = r.offset();
        let version = r.u32()?;
        if version != BTSR_VERSION {
            return Err(ContainerError::format(
                version_at,
                format!("unsupported version {version}"),
            ));
        }
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = r.offset();
            let d = usize::try_from(r.u64()?)
                .map_err(|_| ContainerError::format(at, "dimension overflows usize"))?;
            dims.push(d);
        }
        let dtype_at = r.offset();
        let dtype = r.u8()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ContainerError::format(dtype_at, "element count overflows"))?;
        let data = match dtype {
            0 => TensorData::F64(r.f64s(count)?),
            1 => TensorData::U16(r.u16s(count)?),
            other => {
                return Err(ContainerError::format(
                    dtype_at,
                    format!("unknown dtype {other}"),
                ))
            }
        };
        r.finish()?;
        Ok(Tensor { dims, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Tensor::decode(&fs::read(path)?)
    }
}

/// `dir/name.btsr` + `"bands.json"` -> `dir/name.bands.json`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Cursor over a byte slice that reports offsets in its errors.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ContainerError::format(
                self.bytes.len(),
                format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>, ContainerError> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| ContainerError::format(self.pos, "payload size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u16s(&mut self, count: usize) -> Result<Vec<u16>, ContainerError> {
        let len = count
            .checked_mul(2)
            .ok_or_else(|| ContainerError::format(self.pos, "payload size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<(), ContainerError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(ContainerError::format(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ))
        }
    }
}
