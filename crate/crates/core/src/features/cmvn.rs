use std::fmt::Write as _;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Variances below this are clamped before normalising.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Corpus-global per-dimension mean and (population) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frame_count: u64,
}

/// Accumulates statistics over every frame of every matrix, in iteration
/// order (Welford updates, so the result does not depend on how frames are
/// split into utterances beyond rounding of the same sequence).
pub fn compute_cmvn_stats<'a, I>(corpus: I) -> Result<CmvnStats>
where
    I: IntoIterator<Item = &'a FeatureMatrix>,
{
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    let mut n = 0u64;
    for f in corpus {
        if n == 0 {
            mean = vec![0.0; f.dim()];
            m2 = vec![0.0; f.dim()];
        } else if f.dim() != mean.len() {
            return Err(Error::Dimension(format!(
                "CMVN corpus mixes feature dims {} and {}",
                mean.len(),
                f.dim()
            )));
        }
        for t in 0..f.frames() {
            n += 1;
            let inv = 1.0 / n as f64;
            for (d, &x) in f.row(t).iter().enumerate() {
                let delta = x - mean[d];
                mean[d] += delta * inv;
                m2[d] += delta * (x - mean[d]);
            }
        }
    }
    if n == 0 {
        return Err(Error::Input("CMVN corpus is empty".into()));
    }
    let variance = m2
        .iter()
        .enumerate()
        .map(|(d, &s)| {
            let v = s / n as f64;
            if v < VARIANCE_FLOOR {
                log::warn!("CMVN dimension {d} has variance {v:e}; clamping to {VARIANCE_FLOOR:e}");
                VARIANCE_FLOOR
            } else {
                v
            }
        })
        .collect();
    Ok(CmvnStats {
        mean,
        variance,
        frame_count: n,
    })
}

/// `(x - mean) / sqrt(variance)` per dimension.
pub fn apply_cmvn(f: &FeatureMatrix, stats: &CmvnStats) -> Result<FeatureMatrix> {
    if stats.mean.len() != f.dim() || stats.variance.len() != f.dim() {
        return Err(Error::Dimension(format!(
            "CMVN stats have dim {} but features have dim {}",
            stats.mean.len(),
            f.dim()
        )));
    }
    let inv_std: Vec<f64> = stats
        .variance
        .iter()
        .map(|v| 1.0 / v.max(VARIANCE_FLOOR).sqrt())
        .collect();
    let d = f.dim();
    let data = f
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - stats.mean[i % d]) * inv_std[i % d])
        .collect();
    Ok(f.with_data(data))
}

impl CmvnStats {
    /// Plain-text form: `frames N`, then a `mean` and a `variance` line.
    pub fn to_text(&self) -> String {
        let mut s = format!("frames {}\nmean", self.frame_count);
        for v in &self.mean {
            write!(s, " {v:?}").unwrap();
        }
        s.push_str("\nvariance");
        for v in &self.variance {
            write!(s, " {v:?}").unwrap();
        }
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Input(format!("malformed CMVN stats: {m}"));
        let mut lines = text.lines();
        let frame_count = lines
            .next()
            .and_then(|l| l.strip_prefix("frames "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("frames line"))?;
        let mut vec_line = |key: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad(key))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(key));
            }
            it.map(|v| v.parse::<f64>().map_err(|_| bad(key))).collect()
        };
        let mean = vec_line("mean")?;
        let variance = vec_line("variance")?;
        if mean.len() != variance.len() || mean.is_empty() {
            return Err(bad("mean and variance lengths differ"));
        }
        Ok(Self {
            mean,
            variance,
            frame_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
