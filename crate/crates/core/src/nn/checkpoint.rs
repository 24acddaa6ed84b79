//! `NNCP` parameter checkpoints.
//!
//! Layout (little-endian): magic `NNCP`, version `u32`, parameter count
//! `u32`, then per parameter: name length `u32`, UTF-8 name bytes, four
//! `u32` shape extents, `f32` payload.

use std::path::Path;

use super::{ParamStore, Tensor4};
use crate::binio::{self, Reader};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NNCP";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    binio::put_u32(&mut buf, CHECKPOINT_FORMAT_VERSION);
    binio::put_u32(&mut buf, store.len() as u32);
    for p in store.iter() {
        binio::put_u32(&mut buf, p.name.len() as u32);
        buf.extend_from_slice(p.name.as_bytes());
        for d in p.value.shape() {
            binio::put_u32(&mut buf, d as u32);
        }
        binio::put_f32s(&mut buf, p.value.values());
    }
    buf
}

/// Named tensors stored in a checkpoint, in file order.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor4<f32>)>> {
    let mut r = Reader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_FORMAT_VERSION)?;
    let count = r.u32("parameter count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_owned();
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32("shape")? as usize;
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(path, "shape overflows"))?;
        let values = r.f32s(numel, "parameter payload")?;
        out.push((name, Tensor4::new(shape, values)?));
    }
    r.finish()?;
    Ok(out)
}

pub fn save_checkpoint(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    binio::write_file(path, &encode_checkpoint(store))
}

/// Loads a checkpoint into `store`. Names, order and shapes must match
/// exactly; on mismatch `store` is left untouched.
pub fn load_checkpoint(store: &mut ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let entries = decode_checkpoint(&binio::read_file(path)?, path)?;
    if entries.len() != store.len() {
        return Err(Error::Validation(format!(
            "checkpoint {} holds {} parameters, model expects {}",
            path.display(),
            entries.len(),
            store.len()
        )));
    }
    for ((name, t), p) in entries.iter().zip(store.iter()) {
        if *name != p.name || t.shape() != p.value.shape() {
            return Err(Error::Validation(format!(
                "checkpoint parameter {name:?} {:?} does not match model parameter {:?} {:?}",
                t.shape(),
                p.name,
                p.value.shape()
            )));
        }
    }
    store.set_values(entries.into_iter().map(|(_, t)| t).collect())
}
