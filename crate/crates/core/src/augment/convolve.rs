use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::features::Waveform;

/// Full linear convolution, `a.len() + b.len() - 1` samples, via FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f64]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let mut fa = lift(a);
    let mut fb = lift(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Convolves every channel of `w` with a mono impulse response, or channel
/// `i` with response channel `i` when both have the same channel count.
pub fn convolve_rir(w: &Waveform, rir: &Waveform) -> Result<Waveform> {
    if w.sample_rate() != rir.sample_rate() {
        return Err(Error::Input(format!(
            "sample rates differ: signal {} Hz, impulse response {} Hz",
            w.sample_rate(),
            rir.sample_rate()
        )));
    }
    let channels = match (w.num_channels(), rir.num_channels()) {
        (_, 1) => w.channels().iter().map(|x| fft_convolve(x, rir.channel(0))).collect(),
        (1, _) => rir.channels().iter().map(|h| fft_convolve(w.channel(0), h)).collect(),
        (a, b) if a == b => w.channels().iter().zip(rir.channels()).map(|(x, h)| fft_convolve(x, h)).collect(),
        (a, b) => {
            return Err(Error::Input(format!(
                "cannot convolve {a}-channel signal with {b}-channel impulse response"
            )))
        }
    };
    Waveform::new(channels, w.sample_rate())
}
