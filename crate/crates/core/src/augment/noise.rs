use rand::Rng;

use crate::error::{Error, Result};
use crate::features::Waveform;

/// Mean square of a signal.
pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Result of [`mix_noise_parts`]: the mixture and the exact noise that was
/// added to the clean signal.
#[derive(Clone, Debug)]
pub struct NoiseMix {
    pub mixed: Waveform,
    pub scaled_noise: Vec<f64>,
}

/// Adds `noise` to `clean` at `snr_db`. See [`mix_noise_parts`].
pub fn mix_noise<R: Rng + ?Sized>(clean: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    Ok(mix_noise_parts(clean, noise, snr_db, rng)?.mixed)
}

/// Scales `noise` so that `10 log10(P_clean / P_noise) == snr_db` and adds it.
///
/// Longer noise is randomly cropped; shorter noise is tiled from a random
/// offset. Both signals must be mono with the same sample rate.
pub fn mix_noise_parts<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<NoiseMix> {
    if !snr_db.is_finite() {
        return Err(Error::Input(format!("SNR must be finite, got {snr_db}")));
    }
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::Input("clean and noise sample rates differ".into()));
    }
    let c = clean.samples()?;
    let n = noise.samples()?;
    let pc = power(c);
    if pc == 0.0 || n.is_empty() {
        return Err(Error::Input("clean signal is silent".into()));
    }
    let offset = rng.random_range(0..n.len());
    let segment: Vec<f64> = (0..c.len()).map(|i| n[(offset + i) % n.len()]).collect();
    let pn = power(&segment);
    if pn == 0.0 {
        return Err(Error::Input("noise segment is silent".into()));
    }
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled_noise: Vec<f64> = segment.iter().map(|v| v * gain).collect();
    let mixed = c.iter().zip(&scaled_noise).map(|(a, b)| a + b).collect();
    Ok(NoiseMix {
        mixed: Waveform::mono(mixed, clean.sample_rate())?,
        scaled_noise,
    })
}

/// Random crop to at most `target_len` samples; shorter signals pass through.
pub fn clip_to_length<R: Rng + ?Sized>(w: &Waveform, target_len: usize, rng: &mut R) -> Result<Waveform> {
    if target_len == 0 {
        return Err(Error::Config("target length must be positive".into()));
    }
    if w.len() <= target_len {
        return Ok(w.clone());
    }
    let start = rng.random_range(0..=w.len() - target_len);
    let channels = w.channels().iter().map(|c| c[start..start + target_len].to_vec()).collect();
    Waveform::new(channels, w.sample_rate())
}
