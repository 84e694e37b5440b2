//! Self-describing binary tensor container and newline-delimited JSON label
//! files. The container is the universal exchange format of the pipeline:
//! inputs (RGB, depth, normals) and outputs (ambient, reflectance, point
//! clouds) all travel through it.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    4 bytes  "MELT"
//! version  u32      = 1
//! ndim     u32
//! dims     ndim x u64
//! dtype    u32      1 = f32, 2 = u32, 3 = u8
//! meta_len u64
//! meta     UTF-8 JSON, meta_len bytes
//! payload  row-major element data
//! ```

use crate::model::OrientedBox3D;
use nalgebra::Vector3;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MELT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncation { expected: u64, found: u64 },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U32,
    U8,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::U32 => 2,
            Dtype::U8 => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Dtype> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::U32),
            3 => Some(Dtype::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// An n-dimensional array of one of the supported element types.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    U32(ArrayD<u32>),
    U8(ArrayD<u8>),
}

impl Tensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            Tensor::F32(_) => Dtype::F32,
            Tensor::U32(_) => Dtype::U32,
            Tensor::U8(_) => Dtype::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::U32(a) => a.shape(),
            Tensor::U8(a) => a.shape(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&ArrayD<f32>> {
        match self {
            Tensor::F32(a) => Some(a),
            _ => None,
        }
    }
}

impl From<ArrayD<f32>> for Tensor {
    fn from(a: ArrayD<f32>) -> Self {
        Tensor::F32(a)
    }
}

impl From<ArrayD<u32>> for Tensor {
    fn from(a: ArrayD<u32>) -> Self {
        Tensor::U32(a)
    }
}

impl From<ArrayD<u8>> for Tensor {
    fn from(a: ArrayD<u8>) -> Self {
        Tensor::U8(a)
    }
}

fn push_payload<T: Copy, const N: usize>(
    out: &mut Vec<u8>,
    a: &ArrayD<T>,
    to_bytes: impl Fn(T) -> [u8; N],
) {
    for &v in a.as_standard_layout().iter() {
        out.extend_from_slice(&to_bytes(v));
    }
}

/// Serialize a tensor plus its JSON metadata to the container byte layout.
///
/// Serialization is deterministic: the same tensor and meta always produce
/// identical bytes (JSON object keys are emitted in sorted order).
pub fn encode_tensor(tensor: &Tensor, meta: &serde_json::Value) -> Vec<u8> {
    let dims = tensor.shape();
    let meta_text = meta.to_string();
    let mut out = Vec::with_capacity(
        4 + 4 + 4 + dims.len() * 8 + 4 + 8 + meta_text.len() + tensor.len() * tensor.dtype().size(),
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&tensor.dtype().code().to_le_bytes());
    out.extend_from_slice(&(meta_text.len() as u64).to_le_bytes());
    out.extend_from_slice(meta_text.as_bytes());
    match tensor {
        Tensor::F32(a) => push_payload(&mut out, a, f32::to_le_bytes),
        Tensor::U32(a) => push_payload(&mut out, a, u32::to_le_bytes),
        Tensor::U8(a) => push_payload(&mut out, a, u8::to_le_bytes),
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.data.len() {
            return Err(TensorError::Format(format!(
                "unexpected end of file while reading {what}"
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn read_payload<T: Copy, const N: usize>(
    bytes: &[u8],
    dims: &[usize],
    from_bytes: impl Fn([u8; N]) -> T,
) -> ArrayD<T> {
    let values: Vec<T> = bytes
        .chunks_exact(N)
        .map(|c| from_bytes(c.try_into().unwrap()))
        .collect();
    ArrayD::from_shape_vec(IxDyn(dims), values).expect("payload length already checked")
}

/// Parse a container from bytes.
pub fn decode_tensor(data: &[u8]) -> Result<(Tensor, serde_json::Value), TensorError> {
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(TensorError::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(TensorError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let ndim = cur.u32("ndim")? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.u64("dims")? as usize);
    }
    let code = cur.u32("dtype")?;
    let dtype = Dtype::from_code(code).ok_or(TensorError::UnsupportedDtype(code))?;
    let meta_len = cur.u64("meta_len")? as usize;
    let meta_bytes = cur.take(meta_len, "meta")?;
    let meta_text = std::str::from_utf8(meta_bytes)
        .map_err(|e| TensorError::Format(format!("meta is not UTF-8: {e}")))?;
    let meta: serde_json::Value = if meta_text.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_str(meta_text)
            .map_err(|e| TensorError::Format(format!("meta is not valid JSON: {e}")))?
    };

    let expected = dims.iter().product::<usize>() as u64 * dtype.size() as u64;
    let found = (data.len() - cur.pos) as u64;
    if found < expected {
        return Err(TensorError::Truncation { expected, found });
    }
    if found > expected {
        return Err(TensorError::Format(format!(
            "{} trailing bytes after payload",
            found - expected
        )));
    }
    let payload = &data[cur.pos..];
    let tensor = match dtype {
        Dtype::F32 => Tensor::F32(read_payload(payload, &dims, f32::from_le_bytes)),
        Dtype::U32 => Tensor::U32(read_payload(payload, &dims, u32::from_le_bytes)),
        Dtype::U8 => Tensor::U8(read_payload(payload, &dims, u8::from_le_bytes)),
    };
    Ok((tensor, meta))
}

pub fn write_tensor(
    path: impl AsRef<Path>,
    tensor: &Tensor,
    meta: &serde_json::Value,
) -> Result<(), TensorError> {
    let bytes = encode_tensor(tensor, meta);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Tensor, serde_json::Value), TensorError> {
    let data = std::fs::read(path)?;
    decode_tensor(&data)
}

// ---------------------------------------------------------------------------
// Label files: newline-delimited JSON, one oriented box per record.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct BoxRecord {
    class: String,
    cx: f64,
    cy: f64,
    cz: f64,
    h: f64,
    w: f64,
    l: f64,
    yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Bidirectional class-name <-> id table. Ids are assigned by insertion
/// order, so loading ground truth and detections through one shared map keeps
/// their ids consistent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn new() -> Self {
        ClassMap::default()
    }

    /// The classes used by the reference datasets.
    pub fn automotive() -> Self {
        ClassMap {
            names: vec!["Car".into(), "Person".into(), "Cyclist".into()],
        }
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.names.iter().position(|n| n == name).map(|i| i as u32)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(id) = self.id(name) {
            return id;
        }
        self.names.push(name.to_string());
        (self.names.len() - 1) as u32
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Read a label file. Unknown class names are appended to `classes`.
pub fn read_labels(
    path: impl AsRef<Path>,
    classes: &mut ClassMap,
) -> Result<Vec<OrientedBox3D>, TensorError> {
    let text = std::fs::read_to_string(path)?;
    parse_labels(&text, classes)
}

pub fn parse_labels(
    text: &str,
    classes: &mut ClassMap,
) -> Result<Vec<OrientedBox3D>, TensorError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: BoxRecord = serde_json::from_str(line).map_err(|e| TensorError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let numbers = [
            record.cx, record.cy, record.cz, record.h, record.w, record.l, record.yaw,
        ];
        if numbers.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::Parse {
                line: i + 1,
                msg: "non-finite field".into(),
            });
        }
        if !(record.h > 0.0 && record.w > 0.0 && record.l > 0.0) {
            return Err(TensorError::Parse {
                line: i + 1,
                msg: "box dimensions must be positive".into(),
            });
        }
        let class_id = classes.get_or_insert(&record.class);
        let mut b = OrientedBox3D::new(
            Vector3::new(record.cx, record.cy, record.cz),
            crate::model::BoxSize::new(record.h, record.w, record.l),
            record.yaw,
            class_id,
        );
        b.score = record.score;
        out.push(b);
    }
    Ok(out)
}

pub fn write_labels(
    path: impl AsRef<Path>,
    boxes: &[OrientedBox3D],
    classes: &ClassMap,
) -> Result<(), TensorError> {
    let text = format_labels(boxes, classes)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn format_labels(boxes: &[OrientedBox3D], classes: &ClassMap) -> Result<String, TensorError> {
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        let class = classes
            .name(b.class_id)
            .ok_or_else(|| TensorError::Parse {
                line: i + 1,
                msg: format!("class id {} not in class map", b.class_id),
            })?
            .to_string();
        let numbers = [
            b.center.x, b.center.y, b.center.z, b.size.h, b.size.w, b.size.l, b.yaw,
        ];
        if numbers.iter().any(|v| !v.is_finite()) || b.score.is_some_and(|s| !s.is_finite()) {
            return Err(TensorError::Parse {
                line: i + 1,
                msg: "non-finite field".into(),
            });
        }
        if !(b.size.h > 0.0 && b.size.w > 0.0 && b.size.l > 0.0) {
            return Err(TensorError::Parse {
                line: i + 1,
                msg: "box dimensions must be positive".into(),
            });
        }
        let record = BoxRecord {
            class,
            cx: b.center.x,
            cy: b.center.y,
            cz: b.center.z,
            h: b.size.h,
            w: b.size.w,
            l: b.size.l,
            yaw: b.yaw,
            score: b.score,
        };
        out.push_str(&serde_json::to_string(&record).expect("record is serializable"));
        out.push('\n');
    }
    Ok(out)
}
