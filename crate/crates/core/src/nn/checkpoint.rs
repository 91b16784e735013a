//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic     8 bytes   "TKATCKPT"
//! version   u32       1
//! dtype     u8        4 (f32) or 8 (f64)
//! meta_len  u32       length of the JSON metadata that follows
//! meta      bytes     CheckpointMeta as JSON (model config, sublayer modes, task, step, seed)
//! count     u32       number of tensors
//! then per tensor:
//!   name_len u16, name (UTF-8), rows u32, cols u32,
//!   rows*cols values of the stored dtype, row-major
//! ```
//!
//! Tensors appear in the order of `ModelConfig::param_specs`, and names and
//! shapes are checked against it when loading.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams, Sublayers};
use crate::error::{Error, Result};
use crate::tasks::TaskSpec;
use crate::tensor::{DType, Matrix, Scalar};

const MAGIC: &[u8; 8] = b"TKATCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Sublayer modes the weights were trained with.
    pub sublayers: Sublayers,
    #[serde(default)]
    pub task: Option<TaskSpec>,
    #[serde(default)]
    pub task_seed: u64,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub seed: u64,
}

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, params: &ModelParams<T>, meta: &CheckpointMeta) -> Result<()> {
    if meta.model != *params.config() {
        return Err(Error::Checkpoint("metadata model config differs from parameters".into()));
    }
    let json = serde_json::to_vec(meta)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[T::DTYPE.size_of() as u8])?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let specs = params.config().param_specs();
    w.write_all(&(specs.len() as u32).to_le_bytes())?;
    for ((name, _, _), t) in specs.iter().zip(params.tensors()) {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        w.write_all(&T::to_le_bytes_vec(t.as_slice()))?;
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_header<R: Read>(r: &mut R) -> Result<(CheckpointMeta, DType)> {
    if &take::<8, _>(r)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dtype = match take::<1, _>(r)?[0] {
        4 => DType::F32,
        8 => DType::F64,
        b => return Err(Error::Checkpoint(format!("unknown dtype tag {b}"))),
    };
    let meta_len = u32::from_le_bytes(take(r)?) as usize;
    let mut json = vec![0u8; meta_len];
    r.read_exact(&mut json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)?;
    meta.model.validate()?;
    Ok((meta, dtype))
}

/// Reads a checkpoint, converting values to `T` if it was stored in the other
/// precision.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<(ModelParams<T>, CheckpointMeta, DType)> {
    let (meta, dtype) = read_header(&mut r)?;
    let specs = meta.model.param_specs();
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    if count != specs.len() {
        return Err(Error::Checkpoint(format!("{count} tensors, config expects {}", specs.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in &specs {
        let name_len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut got = vec![0u8; name_len];
        r.read_exact(&mut got)?;
        let (gr, gc) = (
            u32::from_le_bytes(take(&mut r)?) as usize,
            u32::from_le_bytes(take(&mut r)?) as usize,
        );
        if got != name.as_bytes() || (gr, gc) != (*rows, *cols) {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` [{gr}, {gc}] where `{name}` [{rows}, {cols}] was expected",
                String::from_utf8_lossy(&got)
            )));
        }
        let mut bytes = vec![0u8; rows * cols * dtype.size_of()];
        r.read_exact(&mut bytes)?;
        let data: Vec<T> = match dtype {
            DType::F32 => cast_all(f32::from_le_bytes_slice(&bytes)),
            DType::F64 => cast_all(f64::from_le_bytes_slice(&bytes)),
        };
        tensors.push(Matrix::from_vec(*rows, *cols, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((ModelParams::from_tensors(meta.model.clone(), tensors)?, meta, dtype))
}

fn cast_all<S: Scalar, T: Scalar>(v: Vec<S>) -> Vec<T> {
    if S::DTYPE == T::DTYPE {
        // same type: move without touching the bits
        let mut v = std::mem::ManuallyDrop::new(v);
        let (ptr, len, cap) = (v.as_mut_ptr(), v.len(), v.capacity());
        unsafe { Vec::from_raw_parts(ptr as *mut T, len, cap) }
    } else {
        v.into_iter().map(|x| T::from_f64_lossy(x.to_f64_lossy())).collect()
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>, meta: &CheckpointMeta) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, params, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, CheckpointMeta)> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (p, m, _) = read_checkpoint(std::io::BufReader::new(f))?;
    Ok((p, m))
}

/// Metadata and stored dtype, without reading the tensors.
pub fn checkpoint_info(path: &Path) -> Result<(CheckpointMeta, DType)> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    read_header(&mut std::io::BufReader::new(f))
}
