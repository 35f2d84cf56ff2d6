//! `OMNX` dense tensor container: magic, dtype, rank, dims, little-endian payload.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OMNX";
pub const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OmnxTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

pub fn encode_omnx(dims: &[u32], data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().map(|&d| d as usize).product::<usize>(), data.len());
    let mut out = Vec::with_capacity(6 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_omnx(bytes: &[u8]) -> Result<OmnxTensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing OMNX magic".into()));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated OMNX header".into()));
    }
    let dims: Vec<u32> =
        bytes[6..header].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let Some(count) = count else {
        return Err(Error::Format("OMNX dims overflow".into()));
    };
    if bytes.len() != header + 4 * count {
        return Err(Error::Format(format!("payload of {} bytes for {count} values", bytes.len() - header)));
    }
    let data = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(OmnxTensor { dims, data })
}
