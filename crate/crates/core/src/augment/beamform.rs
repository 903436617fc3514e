use super::resample::fractional_delay;
use crate::error::{Error, Result};
use crate::features::Waveform;

/// Metres per second.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Fixed delay-and-sum beamformer steered at azimuth `steer_deg` (degrees,
/// in the x-y plane; 90° is broadside to an array laid along x).
///
/// Each channel is delayed so that a plane wave arriving from the steering
/// direction lines up across microphones, then the channels are averaged.
pub fn delay_and_sum_beamform(w: &Waveform, mics: &[[f64; 3]], steer_deg: f64) -> Result<Waveform> {
    if w.num_channels() < 2 {
        return Err(Error::Config(format!(
            "beamforming needs at least 2 channels, got {}",
            w.num_channels()
        )));
    }
    if mics.len() != w.num_channels() {
        return Err(Error::Config(format!(
            "geometry lists {} microphones for {} channels",
            mics.len(),
            w.num_channels()
        )));
    }
    let theta = steer_deg.to_radians();
    let dir = [theta.cos(), theta.sin(), 0.0];
    let lead: Vec<f64> = mics
        .iter()
        .map(|p| (p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2]) / SPEED_OF_SOUND * w.sample_rate() as f64)
        .collect();
    let min = lead.iter().cloned().fold(f64::INFINITY, f64::min);

    let n = w.len();
    let mut out = vec![0.0; n];
    for (x, l) in w.channels().iter().zip(&lead) {
        let aligned = fractional_delay(x, l - min);
        for (o, v) in out.iter_mut().zip(aligned) {
            *o += v;
        }
    }
    let scale = 1.0 / w.num_channels() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Waveform::mono(out, w.sample_rate())
}
