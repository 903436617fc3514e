//! Constructed signals with known ground truth for the far-field chain.

#![allow(dead_code)]

use avwws::augment::{fft_convolve, istft, stft, wpe_dereverb, StftWindow, WpeConfig};
use avwws::features::Waveform;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;

pub const SR: u32 = 16_000;

pub fn white(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.3).unwrap();
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// Direct impulse followed by an exponentially decaying noise tail.
pub fn exponential_rir(seed: u64, rt60: f64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let decay = 6.9 / (rt60 * SR as f64);
    let mut h: Vec<f64> = (0..len)
        .map(|n| if n < 16 { 0.0 } else { 0.25 * normal.sample(&mut rng) * (-decay * n as f64).exp() })
        .collect();
    h[0] = 1.0;
    h
}

/// Impulse response estimate `sum_n y[n] s[n - l]` for lags `0..lags`.
pub fn cross_correlate(y: &[f64], s: &[f64], lags: usize) -> Vec<f64> {
    let rev: Vec<f64> = s.iter().rev().copied().collect();
    let full = fft_convolve(y, &rev);
    full[s.len() - 1..s.len() - 1 + lags].to_vec()
}

pub fn late_ratio(h: &[f64], boundary: usize) -> f64 {
    let total: f64 = h.iter().map(|v| v * v).sum();
    h[boundary..].iter().map(|v| v * v).sum::<f64>() / total
}

pub fn run_wpe(x: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let w = Waveform::new(x, SR).unwrap();
    let s = stft(&w, 512, 128, StftWindow::SqrtHann).unwrap();
    let d = wpe_dereverb(&s, &WpeConfig::default()).unwrap();
    istft(&d).unwrap().into_channels()
}

/// Late-tail energy ratio of the dry-to-wet response before and after WPE,
/// for a 2 s white-noise source through a 0.5 s exponential tail.
pub fn wpe_fixture(seed: u64) -> (f64, f64) {
    let n = 2 * SR as usize;
    let lags = 8000;
    let boundary = (0.05 * SR as f64) as usize;
    let dry = white(seed, n);
    let h = exponential_rir(seed, 0.5, 6000);
    let wet: Vec<f64> = fft_convolve(&dry, &h)[..n].to_vec();
    let before = late_ratio(&cross_correlate(&wet, &dry, lags), boundary);
    let out = run_wpe(vec![wet]);
    let after = late_ratio(&cross_correlate(&out[0], &dry, lags), boundary);
    (before, after)
}

/// Frequency of the largest bin of a zero-padded FFT.
pub fn peak_frequency(x: &[f64]) -> f64 {
    let n = (x.len() * 4).next_power_of_two();
    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    fft.process(&mut buf);
    let k = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    k as f64 * SR as f64 / n as f64
}

pub fn sine(f: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / SR as f64).sin()).collect()
}
