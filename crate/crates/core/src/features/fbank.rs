use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureKind, FeatureMatrix, Waveform};
use crate::error::{Error, Result};

/// Log-mel filterbank settings. Defaults: 63 bins, 25 ms Hamming frames
/// every 10 ms.
#[derive(Clone, Debug, PartialEq)]
pub struct FbankConfig {
    pub n_mels: usize,
    /// Seconds.
    pub frame_len: f64,
    /// Seconds.
    pub frame_shift: f64,
    /// Energies are clamped to this value before the log.
    pub floor_energy: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            n_mels: 63,
            frame_len: 0.025,
            frame_shift: 0.010,
            floor_energy: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn frame_len_samples(&self, sample_rate: u32) -> usize {
        (self.frame_len * sample_rate as f64).round() as usize
    }

    pub fn frame_shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift * sample_rate as f64).round() as usize
    }

    /// FFT length: next power of two at or above the frame length.
    pub fn fft_size(&self, sample_rate: u32) -> usize {
        self.frame_len_samples(sample_rate).next_power_of_two()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Triangular filters equally spaced on the mel scale between 0 Hz and
/// Nyquist.
#[derive(Clone, Debug)]
pub struct MelBank {
    /// Per filter: first FFT bin and the weights from there on.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelBank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let step = mel_max / (n_mels + 1) as f64;
        let n_bins = fft_size / 2 + 1;
        let bin_mel: Vec<f64> = (0..n_bins)
            .map(|b| hz_to_mel(b as f64 * sample_rate as f64 / fft_size as f64))
            .collect();

        let mut filters = Vec::with_capacity(n_mels);
        let mut centers_hz = Vec::with_capacity(n_mels);
        for k in 0..n_mels {
            let lo = k as f64 * step;
            let center = lo + step;
            let hi = center + step;
            centers_hz.push(mel_to_hz(center));
            let mut first = None;
            let mut weights = Vec::new();
            for (b, &m) in bin_mel.iter().enumerate() {
                let w = if m > lo && m <= center {
                    (m - lo) / (center - lo)
                } else if m > center && m < hi {
                    (hi - m) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    let start = *first.get_or_insert(b);
                    weights.resize(b - start, 0.0);
                    weights.push(w);
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        Ok(Self { filters, centers_hz })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Center frequency of filter `k` in Hz.
    pub fn center_hz(&self, k: usize) -> f64 {
        self.centers_hz[k]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, w), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Log-mel filterbank energies of a mono waveform.
///
/// Produces `1 + (len - frame_len) / frame_shift` frames of `n_mels` values.
pub fn compute_fbank(w: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    let samples = w.samples()?;
    let sr = w.sample_rate();
    let frame_len = cfg.frame_len_samples(sr);
    let shift = cfg.frame_shift_samples(sr);
    if frame_len == 0 || shift == 0 {
        return Err(Error::Config("frame length and shift must span at least one sample".into()));
    }
    if samples.len() < frame_len {
        return Err(Error::Input(format!(
            "waveform of {} samples is shorter than one {frame_len}-sample frame",
            samples.len()
        )));
    }
    let n_fft = cfg.fft_size(sr);
    let bank = MelBank::new(cfg.n_mels, n_fft, sr)?;
    let window = hamming(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let frames = 1 + (samples.len() - frame_len) / shift;
    let mut out = vec![0.0; frames * cfg.n_mels];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    for t in 0..frames {
        let frame = &samples[t * shift..t * shift + frame_len];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(if i < frame_len { frame[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let row = &mut out[t * cfg.n_mels..(t + 1) * cfg.n_mels];
        bank.apply(&power, row);
        for v in row.iter_mut() {
            *v = v.max(cfg.floor_energy).ln();
        }
    }
    FeatureMatrix::new(out, frames, cfg.n_mels, cfg.frame_shift, FeatureKind::Audio)
}
