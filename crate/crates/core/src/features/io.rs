//! Binary feature files.
//!
//! Layout (little-endian): magic `AVWF`, `u32` version (1), `u8` kind
//! (0 audio, 1 video), `u32` frames, `u32` dim, `f64` frame shift in
//! seconds, then `frames * dim` `f64` values in row-major order.

use std::path::Path;

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AVWF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 8;

pub fn encode_features(f: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + f.data().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(f.kind().code());
    out.extend_from_slice(&(f.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    out.extend_from_slice(&f.frame_shift().to_le_bytes());
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            msg: msg.into(),
        }
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.err(0, "bad magic, expected AVWF"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let code = r.take(1, "kind")?[0];
    let kind = FeatureKind::from_code(code).ok_or_else(|| r.err(8, format!("unknown kind {code}")))?;
    let frames = r.u32("frame count")? as usize;
    let dim = r.u32("dimension")? as usize;
    if frames == 0 || dim == 0 {
        return Err(r.err(9, format!("empty matrix {frames}x{dim}")));
    }
    let shift_at = r.pos;
    let frame_shift = r.f64("frame shift")?;
    if !(frame_shift > 0.0) || !frame_shift.is_finite() {
        return Err(r.err(shift_at, format!("invalid frame shift {frame_shift}")));
    }
    let n = frames
        .checked_mul(dim)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| r.err(9, "matrix size overflows"))?;
    let mut data = Vec::with_capacity(n.min(bytes.len() / 8));
    for _ in 0..n {
        let at = r.pos;
        let v = r.f64("values")?;
        if !v.is_finite() {
            return Err(r.err(at, "non-finite value"));
        }
        data.push(v);
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    FeatureMatrix::new(data, frames, dim, frame_shift, kind)
}

pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    std::fs::write(path, encode_features(f)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// Reads a feature file that must hold video features.
pub fn load_video_features(path: &Path) -> Result<FeatureMatrix> {
    let f = read_features(path)?;
    if f.kind() != FeatureKind::Video {
        return Err(Error::Format {
            offset: 8,
            msg: format!("{} holds audio features, expected video", path.display()),
        });
    }
    Ok(f)
}
