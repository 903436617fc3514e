use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::features::Waveform;

/// Zero crossings of the sinc kernel kept on each side (at full bandwidth).
const HALF_WIDTH: usize = 32;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited value of `x` at fractional position `t`, low-passed at
/// `cutoff` times the Nyquist rate of `x` (`cutoff <= 1`). Hann-windowed
/// sinc; samples outside `x` count as zero.
fn interpolate(x: &[f64], t: f64, cutoff: f64) -> f64 {
    let reach = HALF_WIDTH as f64 / cutoff;
    let lo = (t - reach).ceil().max(0.0) as usize;
    let hi = ((t + reach).floor() as isize).min(x.len() as isize - 1);
    if hi < lo as isize {
        return 0.0;
    }
    let mut acc = 0.0;
    for j in lo..=hi as usize {
        let d = t - j as f64;
        let win = 0.5 + 0.5 * (PI * d / reach).cos();
        acc += x[j] * cutoff * sinc(cutoff * d) * win;
    }
    acc
}

/// Delays `x` by `delay` samples (may be fractional or negative); the output
/// has the same length, with zeros shifted in.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    if delay.fract() == 0.0 {
        let d = delay as isize;
        return (0..x.len() as isize)
            .map(|n| {
                let src = n - d;
                if src >= 0 && (src as usize) < x.len() {
                    x[src as usize]
                } else {
                    0.0
                }
            })
            .collect();
    }
    (0..x.len()).map(|n| interpolate(x, n as f64 - delay, 1.0)).collect()
}

/// Speed perturbation by resampling: the output has `round(len / ratio)`
/// samples at the original rate, so both tempo and pitch scale by `ratio`.
pub fn speed_perturb(w: &Waveform, ratio: f64) -> Result<Waveform> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::Input(format!("speed ratio must be positive, got {ratio}")));
    }
    if ratio == 1.0 {
        return Ok(w.clone());
    }
    let out_len = (w.len() as f64 / ratio).round() as usize;
    let cutoff = (1.0 / ratio).min(1.0);
    let channels = w
        .channels()
        .iter()
        .map(|x| (0..out_len).map(|n| interpolate(x, n as f64 * ratio, cutoff)).collect())
        .collect();
    Waveform::new(channels, w.sample_rate())
}
