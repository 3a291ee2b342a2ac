//! `.scmt` tensor files and line-delimited annotation records.
//!
//! Layout of a tensor file (all integers little-endian):
//!
//! ```text
//! "SCMT" | version u8 = 1 | dtype u8 = 0 (f32) | rank u8 | rank x u32 dims | f32 payload
//! ```
//!
//! The payload is the row-major flattening of the tensor. The header is
//! therefore exactly `7 + 4 * rank` bytes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::metrics::BBox;

pub const MAGIC: &[u8; 4] = b"SCMT";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x00;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => DTYPE_F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: DType,
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        validate_dims(&dims)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(ScmError::Shape(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dtype: DType::F32,
            dims,
            data,
        })
    }

    /// Narrows `f64` values to the on-disk `f32` representation.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn header_len(&self) -> usize {
        7 + 4 * self.rank()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype.code());
        out.push(self.rank() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 {
            return Err(ScmError::Format(format!(
                "file is {} bytes, shorter than the fixed header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(ScmError::Format(format!(
                "bad magic {:02x?}, expected \"SCMT\"",
                &bytes[..4]
            )));
        }
        if bytes[4] != VERSION {
            return Err(ScmError::Format(format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(ScmError::Format(format!("unsupported dtype code {}", bytes[5])));
        }
        let rank = bytes[6] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(ScmError::Format(format!("rank {rank} outside [1, {MAX_RANK}]")));
        }
        let header = 7 + 4 * rank;
        if bytes.len() < header {
            return Err(ScmError::Format("truncated dimension list".into()));
        }
        let dims: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        if dims.contains(&0) {
            return Err(ScmError::Format(format!("zero dimension in {dims:?}")));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ScmError::Format(format!("dims {dims:?} overflow")))?;
        let payload = &bytes[header..];
        if payload.len() != count * 4 {
            return Err(ScmError::Format(format!(
                "dims {dims:?} need {} payload bytes, found {}",
                count * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            dtype: DType::F32,
            dims,
            data,
        })
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(ScmError::Shape(format!(
            "rank {} outside [1, {MAX_RANK}]",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(ScmError::Shape(format!("zero dimension in {dims:?}")));
    }
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(ScmError::Shape(format!("dimension exceeds u32 in {dims:?}")));
    }
    Ok(())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| ScmError::storage(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ScmError::storage(path, e))?;
    Tensor::from_bytes(&bytes)
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    #[serde(rename = "width")]
    pub image_width: u32,
    #[serde(rename = "height")]
    pub image_height: u32,
    #[serde(rename = "label")]
    pub class_label: usize,
    #[serde(rename = "boxes")]
    pub gt_boxes: Vec<BBox>,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        if self.gt_boxes.is_empty() {
            return Err(ScmError::Validation(format!(
                "image {} has no ground-truth boxes",
                self.image_id
            )));
        }
        for b in &self.gt_boxes {
            if b.x1 <= b.x0 || b.y1 <= b.y0 {
                return Err(ScmError::Validation(format!(
                    "image {}: degenerate box {b}",
                    self.image_id
                )));
            }
            if b.x1 > self.image_width || b.y1 > self.image_height {
                return Err(ScmError::Validation(format!(
                    "image {}: box {b} exceeds {}x{} image",
                    self.image_id, self.image_width, self.image_height
                )));
            }
        }
        Ok(())
    }
}

/// Parses one JSON record per line; blank lines are skipped.
pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| ScmError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: Annotation = serde_json::from_str(&line).map_err(|e| ScmError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        ann.validate()
            .map_err(|e| ScmError::Validation(format!("line {line_no}: {e}")))?;
        out.push(ann);
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| ScmError::storage(path, e))?;
    parse_annotations(BufReader::new(file))
}

pub fn write_annotations(path: impl AsRef<Path>, anns: &[Annotation]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for ann in anns {
        ann.validate()?;
        serde_json::to_writer(&mut buf, ann)
            .map_err(|e| ScmError::Format(format!("annotation encoding: {e}")))?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| ScmError::storage(path, e))?;
    file.write_all(&buf).map_err(|e| ScmError::storage(path, e))
}
