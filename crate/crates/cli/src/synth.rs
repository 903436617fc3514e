//! Synthetic stand-in corpus: positives carry a fixed two-tone motif in
//! noise, negatives are plain noise or decoys (a lone motif tone, or two
//! tones at other frequencies). Video features are low-dimensional
//! trajectories that move while the motif (or a decoy) sounds.

use std::f64::consts::PI;

use avwws::features::{FeatureKind, FeatureMatrix, Waveform};
use avwws::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Motif tone frequencies in Hz, played in this order.
pub const MOTIF_HZ: [f64; 2] = [700.0, 1800.0];
const DECOY_HZ: [f64; 2] = [1150.0, 3000.0];
/// Length of each motif tone in seconds.
pub const TONE_SECONDS: f64 = 0.1;
/// Video frame period in seconds.
pub const VIDEO_SHIFT: f64 = 0.04;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_positive: usize,
    pub n_negative: usize,
    pub sample_rate: u32,
    /// Seconds, inclusive range.
    pub min_duration: f64,
    pub max_duration: f64,
    pub seed: u64,
    pub video_dim: usize,
    /// Share of each class assigned to the dev split (taken from the end).
    pub dev_fraction: f64,
    /// Noise standard deviation; tones have amplitude 0.3.
    pub noise_level: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_positive: 16,
            n_negative: 16,
            sample_rate: 16_000,
            min_duration: 0.4,
            max_duration: 0.5,
            seed: 1,
            video_dim: 8,
            dev_fraction: 0.0,
            noise_level: 0.05,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_positive == 0 || self.n_negative == 0 {
            return Err(Error::Config("n_positive and n_negative must be at least 1".into()));
        }
        if self.sample_rate < 8000 {
            return Err(Error::Config("sample_rate must be at least 8000".into()));
        }
        let need = 2.0 * TONE_SECONDS + 0.05;
        if !(self.min_duration >= need && self.max_duration >= self.min_duration) {
            return Err(Error::Config(format!(
                "durations must satisfy {need} <= min_duration <= max_duration"
            )));
        }
        if self.video_dim == 0 {
            return Err(Error::Config("video_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config("dev_fraction must be in [0, 1)".into()));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Config("noise_level must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipKind {
    Wake,
    Noise,
    LoneTone,
    OtherTones,
}

#[derive(Clone, Debug)]
pub struct SynthClip {
    pub id: String,
    pub label: u8,
    pub kind: ClipKind,
    pub split: &'static str,
    pub audio: Waveform,
    pub video: FeatureMatrix,
}

fn add_tone(x: &mut [f64], sr: f64, start: usize, len: usize, hz: f64) {
    let ramp = (0.005 * sr) as usize;
    for i in 0..len.min(x.len().saturating_sub(start)) {
        let env = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
        x[start + i] += 0.3 * env * (2.0 * PI * hz * i as f64 / sr).sin();
    }
}

/// Generates the corpus in memory; deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sr = spec.sample_rate as f64;
    let tone = (TONE_SECONDS * sr) as usize;
    let mut clips = Vec::with_capacity(spec.n_positive + spec.n_negative);
    let n_dev = |n: usize| (n as f64 * spec.dev_fraction).floor() as usize;
    // Fixed per-dimension video response pattern.
    let pattern: Vec<f64> = (0..spec.video_dim).map(|k| (1.0 + k as f64).sin()).collect();

    for (label, count) in [(1u8, spec.n_positive), (0u8, spec.n_negative)] {
        for i in 0..count {
            let dur = rng.random_range(spec.min_duration..=spec.max_duration);
            let n = (dur * sr).round() as usize;
            let mut x: Vec<f64> = (0..n).map(|_| spec.noise_level * gaussian(&mut rng)).collect();
            let kind = if label == 1 {
                ClipKind::Wake
            } else {
                [ClipKind::Noise, ClipKind::LoneTone, ClipKind::OtherTones][i % 3]
            };
            let start = rng.random_range(0..=n - 2 * tone);
            let active = match kind {
                ClipKind::Wake => {
                    add_tone(&mut x, sr, start, tone, MOTIF_HZ[0]);
                    add_tone(&mut x, sr, start + tone, tone, MOTIF_HZ[1]);
                    Some((start, 2 * tone))
                }
                ClipKind::LoneTone => {
                    add_tone(&mut x, sr, start, tone, MOTIF_HZ[rng.random_range(0..2)]);
                    Some((start, tone))
                }
                ClipKind::OtherTones => {
                    add_tone(&mut x, sr, start, tone, DECOY_HZ[0]);
                    add_tone(&mut x, sr, start + tone, tone, DECOY_HZ[1]);
                    Some((start, 2 * tone))
                }
                ClipKind::Noise => None,
            };

            let frames = (dur / VIDEO_SHIFT).ceil() as usize;
            let mut v = Vec::with_capacity(frames * spec.video_dim);
            for t in 0..frames {
                let time = t as f64 * VIDEO_SHIFT;
                let moving = active.is_some_and(|(s, len)| {
                    let (a, b) = (s as f64 / sr, (s + len) as f64 / sr);
                    time + VIDEO_SHIFT > a && time < b
                });
                let gain = match (moving, kind) {
                    (false, _) => 0.0,
                    (true, ClipKind::Wake) => 1.0,
                    (true, _) => -0.5,
                };
                for p in &pattern {
                    v.push(gain * p + 0.3 * gaussian(&mut rng));
                }
            }
            let video = FeatureMatrix::new(v, frames, spec.video_dim, VIDEO_SHIFT, FeatureKind::Video)?;
            let prefix = if label == 1 { "pos" } else { "neg" };
            clips.push(SynthClip {
                id: format!("{prefix}{i:04}"),
                label,
                kind,
                split: if i >= count - n_dev(count) { "dev" } else { "train" },
                audio: Waveform::mono(x, spec.sample_rate)?,
                video,
            });
        }
    }
    Ok(clips)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// Energy-based detector used as an oracle for learnability: the smaller
/// of the two motif-band energies relative to the total, maximised over
/// positions of a motif-sized window.
pub fn motif_band_score(w: &Waveform) -> Result<f64> {
    let x = w.samples()?;
    let sr = w.sample_rate() as f64;
    let tone = (TONE_SECONDS * sr) as usize;
    let hop = tone / 4;
    let band = |seg: &[f64], hz: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in seg.iter().enumerate() {
            let a = 2.0 * PI * hz * i as f64 / sr;
            re += v * a.cos();
            im += v * a.sin();
        }
        (re * re + im * im) / (seg.len() as f64).powi(2)
    };
    let mut best: f64 = 0.0;
    let mut s = 0;
    while s + 2 * tone <= x.len() {
        let a = band(&x[s..s + tone], MOTIF_HZ[0]);
        let b = band(&x[s + tone..s + 2 * tone], MOTIF_HZ[1]);
        best = best.max(a.min(b));
        s += hop;
    }
    Ok(best)
}
