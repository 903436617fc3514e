//! Audio front-end: waveforms, log-mel filterbanks, global CMVN,
//! SpecAugment, and the binary feature-file format shared with video
//! feature producers.

mod cmvn;
mod fbank;
mod io;
mod specaug;

pub use cmvn::{apply_cmvn, compute_cmvn_stats, CmvnStats, VARIANCE_FLOOR};
pub use fbank::{compute_fbank, hz_to_mel, mel_to_hz, FbankConfig, MelBank};
pub use io::{decode_features, encode_features, load_video_features, read_features, write_features};
pub use specaug::{apply_masks, spec_augment, Mask, MaskAxis, SpecAugmentConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PCM signal, one `Vec` per channel, all channels equally long.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        let Some(first) = channels.first() else {
            return Err(Error::Input("waveform has no channels".into()));
        };
        if channels.iter().any(|c| c.len() != first.len()) {
            return Err(Error::Input("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// The only channel of a mono signal.
    pub fn samples(&self) -> Result<&[f64]> {
        match self.channels.as_slice() {
            [only] => Ok(only),
            _ => Err(Error::Input(format!(
                "expected a mono waveform, got {} channels",
                self.channels.len()
            ))),
        }
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// Which modality a feature matrix describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Audio,
    Video,
}

impl FeatureKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            FeatureKind::Audio => 0,
            FeatureKind::Video => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FeatureKind::Audio),
            1 => Some(FeatureKind::Video),
            _ => None,
        }
    }
}

/// `T × D` frame-level features, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    frames: usize,
    dim: usize,
    frame_shift: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, frames: usize, dim: usize, frame_shift: f64, kind: FeatureKind) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Dimension(format!("feature matrix must be non-empty, got {frames}x{dim}")));
        }
        if data.len() != frames * dim {
            return Err(Error::Dimension(format!(
                "{frames}x{dim} feature matrix given {} values",
                data.len()
            )));
        }
        if !(frame_shift > 0.0) || !frame_shift.is_finite() {
            return Err(Error::Input(format!("frame shift must be positive, got {frame_shift}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            data,
            frames,
            dim,
            frame_shift,
            kind,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.dim + d]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `[T, D]` tensor view (copied).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.dim], self.data.clone()).expect("validated on construction")
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { data, ..self.clone() }
    }
}
