//! `OMNT` parameter checkpoints.
//!
//! Layout (little-endian): magic `b"OMNT"`, `u32` tensor count, then per tensor
//! `u16` name length, UTF-8 name, `u8` dtype code (1 = f32, 2 = f64), `u8` rank,
//! `u32` dims, row-major payload.

use ndarray::Array2;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const OMNT_MAGIC: &[u8; 4] = b"OMNT";
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(OMNT_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(2);
        out.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
        for v in value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("OMNT: truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decode all tensors as `(name, matrix)`; rank-1 tensors load as a single row.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Array2<f64>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != OMNT_MAGIC {
        return Err(Error::Format("missing OMNT magic".into()));
    }
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("OMNT: tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let rank = r.u8()?;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => return Err(Error::Format(format!("OMNT: tensor `{name}` has unsupported rank {rank}"))),
        };
        let n = rows * cols;
        let data: Vec<f64> = match dtype {
            DTYPE_F64 => r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            DTYPE_F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => return Err(Error::Format(format!("OMNT: unknown dtype code {other}"))),
        };
        tensors.push((name, Array2::from_shape_vec((rows, cols), data).expect("shape matches payload")));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("OMNT: trailing bytes after last tensor".into()));
    }
    Ok(tensors)
}

/// Overwrite every parameter of `store` from a checkpoint with exactly the same names and shapes.
pub fn load_checkpoint(store: &mut ParamStore, bytes: &[u8]) -> Result<()> {
    let tensors = decode_checkpoint(bytes)?;
    if tensors.len() != store.len() {
        return Err(Error::Format(format!("checkpoint has {} tensors, model has {}", tensors.len(), store.len())));
    }
    for (name, value) in tensors {
        let id = store.find(&name).ok_or_else(|| Error::Format(format!("unknown tensor `{name}` in checkpoint")))?;
        if store.get(id).dim() != value.dim() {
            return Err(Error::Shape(format!(
                "tensor `{name}`: checkpoint {:?}, model {:?}",
                value.dim(),
                store.get(id).dim()
            )));
        }
        *store.get_mut(id) = value;
    }
    Ok(())
}
