//! Binary tensor container shared by model and checkpoint files.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON header,
//! then the tensor payload. The header lists every tensor with its dtype,
//! shape and byte offset into the payload. All numbers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FSTBCTR1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl TensorData {
    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F64(_) => "f64",
            TensorData::F32(_) => "f32",
            TensorData::U32(_) => "u32",
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// An in-memory container: a kind tag, a format version, free-form JSON
/// metadata and named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub version: u32,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn new(kind: &str, version: u32, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.to_owned(),
            version,
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: TensorData) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        self.tensors.push(Tensor {
            name: name.to_owned(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                dtype: t.data.dtype().to_owned(),
                shape: t.shape.clone(),
                offset: payload.len(),
            });
            t.data.write_le(&mut payload);
        }
        let header = Header {
            kind: self.kind.clone(),
            version: self.version,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        framed(&json, &payload)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (json, payload) = unframe(bytes, path)?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let count: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f64" => 8,
                "f32" | "u32" => 4,
                other => return Err(Error::format(path, format!("unknown dtype {other}"))),
            };
            let end = e
                .offset
                .checked_add(count * width)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| Error::format(path, format!("tensor {} out of bounds", e.name)))?;
            let raw = &payload[e.offset..end];
            let data = match e.dtype.as_str() {
                "f64" => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                "f32" => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                _ => TensorData::U32(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
            };
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            kind: header.kind,
            version: header.version,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Reads the file and checks its kind and version.
    pub fn read_expecting(path: &Path, kind: &str, version: u32) -> Result<Self> {
        let file = Self::read(path)?;
        file.expect_kind(kind, version, path)?;
        Ok(file)
    }

    pub fn expect_kind(&self, kind: &str, version: u32, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Incompatible(format!(
                "{}: expected a {kind} file, found {}",
                path.display(),
                self.kind
            )));
        }
        if self.version != version {
            return Err(Error::Incompatible(format!(
                "{}: {kind} format version {} is not supported (expected {version})",
                path.display(),
                self.version
            )));
        }
        Ok(())
    }

    pub fn f64s(&self, name: &str, path: &Path) -> Result<(&[usize], &[f64])> {
        match self.get(name) {
            Some(Tensor {
                shape,
                data: TensorData::F64(v),
                ..
            }) => Ok((shape, v)),
            _ => Err(Error::format(path, format!("missing f64 tensor {name}"))),
        }
    }

    pub fn f32s(&self, name: &str, path: &Path) -> Result<(&[usize], &[f32])> {
        match self.get(name) {
            Some(Tensor {
                shape,
                data: TensorData::F32(v),
                ..
            }) => Ok((shape, v)),
            _ => Err(Error::format(path, format!("missing f32 tensor {name}"))),
        }
    }

    pub fn u32s(&self, name: &str, path: &Path) -> Result<(&[usize], &[u32])> {
        match self.get(name) {
            Some(Tensor {
                shape,
                data: TensorData::U32(v),
                ..
            }) => Ok((shape, v)),
            _ => Err(Error::format(path, format!("missing u32 tensor {name}"))),
        }
    }
}

/// Magic, header length, header and payload.
pub(crate) fn framed(header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

pub(crate) fn unframe<'a>(bytes: &'a [u8], path: &Path) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    Ok((&bytes[16..end], &bytes[end..]))
}

/// Writes through a temporary sibling file and renames it into place, so a
/// failed write never leaves a partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
