//! Property tests for the far-field simulation and enhancement chain,
//! checked against constructed fixtures with known ground truth.

#[path = "common/dsp_fixtures.rs"]
mod dsp_fixtures;

use avwws::augment::{fft_convolve, mix_noise_parts, power, speed_perturb};
use avwws::features::Waveform;
use dsp_fixtures::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn wpe_reduces_late_tail_on_reverberant_fixtures() {
    for seed in 0..10 {
        let (before, after) = wpe_fixture(seed);
        assert!(after < before, "seed {seed}: {before:.4} -> {after:.4}");
    }
}

#[test]
fn wpe_does_not_add_energy() {
    let n = 2 * SR as usize;
    for seed in 0..3 {
        let wet: Vec<f64> = fft_convolve(&white(seed, n), &exponential_rir(seed, 0.5, 6000))[..n].to_vec();
        let out = run_wpe(vec![wet.clone()]);
        let growth = power(&out[0]) / power(&wet);
        assert!(growth <= 1.01, "seed {seed}: energy grew by {growth}");
    }
}

#[test]
fn wpe_two_channel_fixture() {
    let n = 2 * SR as usize;
    let dry = white(42, n);
    let chans: Vec<Vec<f64>> = (0..2)
        .map(|c| fft_convolve(&dry, &exponential_rir(100 + c, 0.4, 5000))[..n].to_vec())
        .collect();
    let before: f64 = chans.iter().map(|c| late_ratio(&cross_correlate(c, &dry, 6000), 800)).sum();
    let out = run_wpe(chans);
    let after: f64 = out.iter().map(|c| late_ratio(&cross_correlate(c, &dry, 6000), 800)).sum();
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn wpe_leaves_anechoic_signal_nearly_unchanged() {
    let n = 4 * SR as usize;
    let dry = white(7, n);
    let out = run_wpe(vec![dry.clone()]);
    let diff: Vec<f64> = out[0].iter().zip(&dry).map(|(a, b)| a - b).collect();
    let change = power(&diff) / power(&dry);
    assert!(change < 0.05, "relative change {change}");
}

#[test]
fn speed_perturb_scales_frequency_and_length() {
    for &f in &[300.0, 1000.0, 2500.0] {
        let x = sine(f, 8000);
        let w = Waveform::mono(x, SR).unwrap();
        for &r in &[0.9, 1.1] {
            let y = speed_perturb(&w, r).unwrap();
            let expect_len = 8000.0 / r;
            assert!((y.len() as f64 - expect_len).abs() <= 1.0);
            let peak = peak_frequency(y.channel(0));
            assert!((peak - f * r).abs() <= 0.01 * f * r, "f={f} r={r}: peak {peak}");
        }
    }
}

#[test]
fn mix_noise_hits_requested_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..10u64 {
        let clean = Waveform::mono(white(seed, 5000), SR).unwrap();
        let noise_len = rng.random_range(1000..9000);
        let noise = Waveform::mono(white(seed + 1000, noise_len), SR).unwrap();
        for snr in [-15.0, -5.0, 0.0, 5.0, 15.0] {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mix = mix_noise_parts(&clean, &noise, snr, &mut r).unwrap();
            let measured = 10.0 * (power(clean.channel(0)) / power(&mix.scaled_noise)).log10();
            assert!((measured - snr).abs() <= 0.01);
            for ((m, c), nz) in mix.mixed.channel(0).iter().zip(clean.channel(0)).zip(&mix.scaled_noise) {
                assert_eq!(*m, c + nz);
            }
        }
    }
}
