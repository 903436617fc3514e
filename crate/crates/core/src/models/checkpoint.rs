//! Checkpoint files: a named parameter table.
//!
//! Layout (little-endian): magic `AVCK`, `u32` version (1), `u32` number of
//! entries; per entry `u32` name length, UTF-8 name, `u32` rank, `rank`
//! `u32` dims, then the `f64` values row-major. Entries are written in name
//! order.

use std::path::Path;

use super::Params;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"AVCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Params> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
        if bytes.len() - pos < n {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let at = pos;
        pos += n;
        Ok((at, &bytes[at..at + n]))
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());

    let (_, magic) = take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected AVCK".into(),
        });
    }
    let (at, v) = take(4, "version")?;
    if u32_at(v) != VERSION {
        return Err(Error::Format {
            offset: at as u64,
            msg: format!("unsupported version {}", u32_at(v)),
        });
    }
    let count = u32_at(take(4, "entry count")?.1);
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = u32_at(take(4, "name length")?.1) as usize;
        let (at, raw) = take(name_len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Format {
                offset: at as u64,
                msg: "name is not UTF-8".into(),
            })?
            .to_string();
        let (at, r) = take(4, "rank")?;
        let rank = u32_at(r) as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format {
                offset: at as u64,
                msg: format!("{name}: invalid rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_at(take(4, "dims")?.1) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= bytes.len() / 8)
            .ok_or_else(|| Error::Format {
                offset: at as u64,
                msg: format!("{name}: invalid shape {shape:?}"),
            })?;
        let (_, raw) = take(n * 8, "values")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: at as u64,
            msg: e.to_string(),
        })?;
        if params.insert(name.clone(), t).is_some() {
            return Err(Error::Format {
                offset: at as u64,
                msg: format!("duplicate parameter {name}"),
            });
        }
    }
    if pos != bytes.len() {
        return Err(Error::Format {
            offset: pos as u64,
            msg: "trailing bytes".into(),
        });
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &Params) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Params> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
