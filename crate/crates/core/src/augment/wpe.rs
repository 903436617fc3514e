//! Weighted prediction error (WPE) dereverberation.
//!
//! For every frequency bin, late reverberation is predicted from frames at
//! least `delay` frames in the past with a multi-channel linear filter of
//! `taps` frames, estimated by least squares weighted with the inverse
//! power of the current dereverberated estimate, and subtracted. The
//! weight/filter estimation alternates for `iterations` rounds.

use rustfft::num_complex::Complex;

use super::stft::Spectrogram;
use crate::error::{Error, Result};

type C64 = Complex<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct WpeConfig {
    pub taps: usize,
    pub delay: usize,
    /// Zero leaves the input unchanged.
    pub iterations: usize,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 3,
            iterations: 3,
        }
    }
}

/// Relative floor on the per-frame power weights.
const POWER_FLOOR: f64 = 1e-10;
/// Diagonal loading as a fraction of the correlation matrix trace.
const LOADING: f64 = 1e-10;

pub fn wpe_dereverb(s: &Spectrogram, cfg: &WpeConfig) -> Result<Spectrogram> {
    if cfg.taps == 0 || cfg.delay == 0 {
        return Err(Error::Config(format!(
            "WPE needs taps >= 1 and delay >= 1, got taps={} delay={}",
            cfg.taps, cfg.delay
        )));
    }
    let mut out = s.clone();
    if cfg.iterations == 0 {
        return Ok(out);
    }
    let bins = s.bins();
    let frames = s.frames;
    let chans = s.channels.len();
    for f in 0..bins {
        let x: Vec<Vec<C64>> = (0..chans)
            .map(|c| (0..frames).map(|t| s.at(c, t, f)).collect())
            .collect();
        let z = dereverb_bin(&x, cfg);
        for (c, zc) in z.iter().enumerate() {
            for (t, v) in zc.iter().enumerate() {
                out.channels[c][t * bins + f] = *v;
            }
        }
    }
    Ok(out)
}

/// Dereverberates one frequency bin given as `x[channel][frame]`.
fn dereverb_bin(x: &[Vec<C64>], cfg: &WpeConfig) -> Vec<Vec<C64>> {
    let chans = x.len();
    let frames = x[0].len();
    let dim = chans * cfg.taps;
    // Stacked delayed observation for frame t: entry (tap, channel).
    let stacked = |t: usize, buf: &mut Vec<C64>| {
        buf.clear();
        for tap in 0..cfg.taps {
            let src = t as isize - (cfg.delay + tap) as isize;
            for xc in x {
                buf.push(if src >= 0 { xc[src as usize] } else { C64::new(0.0, 0.0) });
            }
        }
    };

    let mut z: Vec<Vec<C64>> = x.to_vec();
    let mut y = Vec::with_capacity(dim);
    for _ in 0..cfg.iterations {
        let lambda: Vec<f64> = (0..frames)
            .map(|t| z.iter().map(|zc| zc[t].norm_sqr()).sum::<f64>() / chans as f64)
            .collect();
        let mean_power = lambda.iter().sum::<f64>() / frames as f64;
        if mean_power == 0.0 {
            return z;
        }
        let floor = POWER_FLOOR * mean_power;

        let mut r = vec![C64::new(0.0, 0.0); dim * dim];
        let mut p = vec![C64::new(0.0, 0.0); dim * chans];
        for t in 0..frames {
            let w = 1.0 / lambda[t].max(floor);
            stacked(t, &mut y);
            for i in 0..dim {
                let yi = y[i] * w;
                if yi == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..dim {
                    r[i * dim + j] += yi * y[j].conj();
                }
                for c in 0..chans {
                    p[i * chans + c] += yi * x[c][t].conj();
                }
            }
        }
        let g = solve_hermitian(r, p, dim, chans);
        for t in 0..frames {
            stacked(t, &mut y);
            for c in 0..chans {
                let pred: C64 = (0..dim).map(|i| g[i * chans + c].conj() * y[i]).sum();
                z[c][t] = x[c][t] - pred;
            }
        }
    }
    z
}

/// Solves `a · g = b` for Hermitian positive semi-definite `a` (`n × n`)
/// and `b` (`n × m`), with diagonal loading. Loading is increased until the
/// Cholesky factorisation succeeds; a zero matrix yields `g = 0`.
fn solve_hermitian(a: Vec<C64>, b: Vec<C64>, n: usize, m: usize) -> Vec<C64> {
    let trace: f64 = (0..n).map(|i| a[i * n + i].re).sum();
    if !(trace > 0.0) {
        return vec![C64::new(0.0, 0.0); n * m];
    }
    let mut load = LOADING * trace;
    loop {
        let mut l = a.clone();
        for i in 0..n {
            l[i * n + i] += load;
        }
        if cholesky_in_place(&mut l, n) {
            return cholesky_solve(&l, b, n, m);
        }
        load *= 10.0;
    }
}

/// Lower-triangular `L` with `L Lᴴ = a`, stored in the lower half of `a`.
fn cholesky_in_place(a: &mut [C64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[C64], mut b: Vec<C64>, n: usize, m: usize) -> Vec<C64> {
    for c in 0..m {
        // Forward: L y = b.
        for i in 0..n {
            let mut s = b[i * m + c];
            for k in 0..i {
                s -= l[i * n + k] * b[k * m + c];
            }
            b[i * m + c] = s / l[i * n + i];
        }
        // Backward: Lᴴ x = y.
        for i in (0..n).rev() {
            let mut s = b[i * m + c];
            for k in i + 1..n {
                s -= l[k * n + i].conj() * b[k * m + c];
            }
            b[i * m + c] = s / l[i * n + i].conj();
        }
    }
    b
}
