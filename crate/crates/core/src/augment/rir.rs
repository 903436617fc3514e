//! Image-source room impulse responses for shoebox rooms.

use std::f64::consts::PI;

use super::beamform::SPEED_OF_SOUND;
use crate::error::{Error, Result};
use crate::features::Waveform;

/// Shoebox room with one source and any number of microphones.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomSpec {
    /// Metres along x, y, z.
    pub dimensions: [f64; 3],
    pub source: [f64; 3],
    pub mics: Vec<[f64; 3]>,
    /// Seconds.
    pub rt60: f64,
    pub max_order: usize,
}

impl RoomSpec {
    fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Input(format!("room dimensions {:?} must be positive", self.dimensions)));
        }
        if !(self.rt60 > 0.0) {
            return Err(Error::Input(format!("rt60 must be positive, got {}", self.rt60)));
        }
        if self.mics.is_empty() {
            return Err(Error::Input("room has no microphones".into()));
        }
        let inside = |p: &[f64; 3]| p.iter().zip(&self.dimensions).all(|(&x, &l)| x > 0.0 && x < l);
        if !inside(&self.source) {
            return Err(Error::Input(format!("source {:?} is not strictly inside the room", self.source)));
        }
        for m in &self.mics {
            if !inside(m) {
                return Err(Error::Input(format!("microphone {m:?} is not strictly inside the room")));
            }
            if dist(m, &self.source) < 1e-9 {
                return Err(Error::Input(format!("source coincides with microphone {m:?}")));
            }
        }
        Ok(())
    }

    /// Pressure reflection coefficient of every wall, from Sabine's formula.
    pub fn reflection_coefficient(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        let volume = x * y * z;
        let surface = 2.0 * (x * y + x * z + y * z);
        let alpha = (0.161 * volume / (surface * self.rt60)).min(1.0);
        (1.0 - alpha).sqrt()
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Image coordinate `i` along one axis of length `len` for a source at `s`.
/// `|i|` is the number of wall reflections along that axis.
fn image_coord(i: i64, s: f64, len: f64) -> f64 {
    if i % 2 == 0 {
        i as f64 * len + s
    } else {
        (i + 1) as f64 * len - s
    }
}

/// One impulse response channel per microphone. Each image contributes
/// `beta^order / (4 pi d)` at the nearest sample to its propagation delay.
pub fn simulate_rir(room: &RoomSpec, sample_rate: u32) -> Result<Waveform> {
    room.validate()?;
    let beta = room.reflection_coefficient();
    let n = room.max_order as i64;
    let fs = sample_rate as f64;
    let mut channels = Vec::with_capacity(room.mics.len());
    for mic in &room.mics {
        let mut taps: Vec<(usize, f64)> = Vec::new();
        for i in -n..=n {
            for j in -(n - i.abs())..=(n - i.abs()) {
                let rest = n - i.abs() - j.abs();
                for k in -rest..=rest {
                    let order = (i.abs() + j.abs() + k.abs()) as i32;
                    let img = [
                        image_coord(i, room.source[0], room.dimensions[0]),
                        image_coord(j, room.source[1], room.dimensions[1]),
                        image_coord(k, room.source[2], room.dimensions[2]),
                    ];
                    let d = dist(&img, mic);
                    let gain = beta.powi(order) / (4.0 * PI * d);
                    if gain == 0.0 {
                        continue;
                    }
                    taps.push(((d / SPEED_OF_SOUND * fs).round() as usize, gain));
                }
            }
        }
        let len = taps.iter().map(|t| t.0).max().unwrap_or(0) + 1;
        let mut h = vec![0.0; len];
        for (idx, g) in taps {
            h[idx] += g;
        }
        channels.push(h);
    }
    let len = channels.iter().map(Vec::len).max().unwrap_or(1);
    channels.iter_mut().for_each(|c| c.resize(len, 0.0));
    Waveform::new(channels, sample_rate)
}
