use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::features::Waveform;

/// Analysis/synthesis window. The same window is used on both sides, so
/// its square must satisfy constant overlap-add at the chosen hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StftWindow {
    /// Square root of the periodic Hann window; COLA for any hop dividing
    /// half the frame.
    #[default]
    SqrtHann,
    /// Boxcar; COLA only when the hop divides the frame.
    Rectangular,
}

impl StftWindow {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            StftWindow::SqrtHann => (0..n)
                .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).sqrt())
                .collect(),
            StftWindow::Rectangular => vec![1.0; n],
        }
    }
}

/// Complex STFT per channel, each stored `frames × bins` row-major.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub channels: Vec<Vec<Complex<f64>>>,
    pub frames: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub window: StftWindow,
    /// Length of the time signal this came from.
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    /// `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn at(&self, ch: usize, t: usize, f: usize) -> Complex<f64> {
        self.channels[ch][t * self.bins() + f]
    }

    /// Left zero padding applied before framing.
    fn pad(&self) -> usize {
        self.fft_size - self.hop
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|c| c.norm_sqr()).sum()
    }
}

fn check_cola(window: &[f64], hop: usize) -> Result<()> {
    let n = window.len();
    if hop == 0 || hop > n {
        return Err(Error::Config(format!("hop {hop} must be in 1..={n}")));
    }
    let sums: Vec<f64> = (0..hop)
        .map(|i| (i..n).step_by(hop).map(|j| window[j] * window[j]).sum())
        .collect();
    let (lo, hi) = sums.iter().fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
    if lo <= 0.0 || hi - lo > 1e-9 * hi {
        return Err(Error::Config(format!(
            "window does not overlap-add to a constant at hop {hop} (fft size {n})"
        )));
    }
    Ok(())
}

pub fn stft(w: &Waveform, fft_size: usize, hop: usize, window: StftWindow) -> Result<Spectrogram> {
    if fft_size < 2 || !fft_size.is_multiple_of(2) {
        return Err(Error::Config(format!("fft size {fft_size} must be even and >= 2")));
    }
    let win = window.coefficients(fft_size);
    check_cola(&win, hop)?;
    let pad = fft_size - hop;
    let len = w.len();
    let frames = (pad + len).div_ceil(hop).max(1);
    let padded_len = (frames - 1) * hop + fft_size;
    let bins = fft_size / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);

    let mut channels = Vec::with_capacity(w.num_channels());
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for x in w.channels() {
        let mut padded = vec![0.0; padded_len];
        padded[pad..pad + len].copy_from_slice(x);
        let mut spec = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            let frame = &padded[t * hop..t * hop + fft_size];
            for ((b, &s), &wv) in buf.iter_mut().zip(frame).zip(&win) {
                *b = Complex::new(s * wv, 0.0);
            }
            fft.process(&mut buf);
            spec.extend_from_slice(&buf[..bins]);
        }
        channels.push(spec);
    }
    Ok(Spectrogram {
        channels,
        frames,
        fft_size,
        hop,
        window,
        signal_len: len,
        sample_rate: w.sample_rate(),
    })
}

/// Weighted overlap-add inverse of [`stft`].
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let n = s.fft_size;
    let win = s.window.coefficients(n);
    check_cola(&win, s.hop)?;
    let bins = s.bins();
    let padded_len = (s.frames - 1) * s.hop + n;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);

    let mut norm = vec![0.0; padded_len];
    for t in 0..s.frames {
        for (j, &wv) in win.iter().enumerate() {
            norm[t * s.hop + j] += wv * wv;
        }
    }
    let mut out_channels = Vec::with_capacity(s.channels.len());
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for spec in &s.channels {
        let mut acc = vec![0.0; padded_len];
        for t in 0..s.frames {
            let frame = &spec[t * bins..(t + 1) * bins];
            buf[..bins].copy_from_slice(frame);
            for k in bins..n {
                buf[k] = frame[n - k].conj();
            }
            ifft.process(&mut buf);
            for (j, (b, &wv)) in buf.iter().zip(&win).enumerate() {
                acc[t * s.hop + j] += b.re / n as f64 * wv;
            }
        }
        let pad = s.pad();
        let out = (pad..pad + s.signal_len)
            .map(|i| if norm[i] > 1e-12 { acc[i] / norm[i] } else { 0.0 })
            .collect();
        out_channels.push(out);
    }
    Waveform::new(out_channels, s.sample_rate)
}
