//! Flat named-tensor storage shared by the network, the optimizer and the
//! checkpoint container.
//!
//! Checkpoint layout (little-endian throughout):
//!
//! ```text
//! magic    8 bytes  "INCNASCK"
//! version  u32      1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name (utf-8)
//!   ndim     u32, dims (u64 each)
//!   data     f32 * prod(dims)
//! ```
//!
//! Hyperparameters travel in a JSON sidecar next to the binary file.

use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

const MAGIC: &[u8; 8] = b"INCNASCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("tensor mismatch: {0}")]
    Mismatch(String),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered tensor names and shapes over one flat buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    tensors: Vec<TensorInfo>,
    len: usize,
}

impl Layout {
    /// Appends a tensor and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += info.len();
        self.tensors.push(info);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Parameter values in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    layout: Arc<Layout>,
    pub data: Vec<f64>,
}

impl Params {
    pub fn zeros(layout: Arc<Layout>) -> Params {
        let data = vec![0.0; layout.len()];
        Params { layout, data }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Values as stored in a checkpoint (rounded to f32).
    pub fn to_f32_bits(&self) -> Vec<u32> {
        self.data.iter().map(|&x| (x as f32).to_bits()).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.layout.tensors.len() as u32).to_le_bytes())?;
        for t in &self.layout.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for &x in &self.data[t.range()] {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    /// Reads a checkpoint; names and shapes must match `layout` exactly.
    pub fn read_from<R: Read>(mut r: R, layout: Arc<Layout>) -> Result<Params, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = read_u32(&mut r)? as usize;
        if count != layout.tensors.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{count} tensors in file, {} expected",
                layout.tensors.len()
            )));
        }
        let mut params = Params::zeros(layout.clone());
        for t in &layout.tensors {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            if name != t.name.as_bytes() {
                return Err(CheckpointError::Mismatch(format!(
                    "found tensor {:?}, expected {}",
                    String::from_utf8_lossy(&name),
                    t.name
                )));
            }
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape != t.shape {
                return Err(CheckpointError::Mismatch(format!(
                    "{}: shape {shape:?}, expected {:?}",
                    t.name, t.shape
                )));
            }
            let mut buf = vec![0u8; t.len() * 4];
            r.read_exact(&mut buf)?;
            for (dst, chunk) in params.data[t.range()].iter_mut().zip(buf.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
            }
        }
        Ok(params)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Path of the JSON sidecar for a checkpoint file.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
