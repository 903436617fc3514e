//! Named augmentation steps and their expansion into concrete variants.
//!
//! A chain is written as whitespace-separated steps, each `name` or
//! `name:v1,v2,...`. A step with several values fans out, so
//! `speed:0.9,1.1 noise:0,5` yields four variants per utterance.

use avwws::augment::{
    clip_to_length, convolve_rir, delay_and_sum_beamform, istft, mix_noise_parts, simulate_rir, speed_perturb, stft,
    wpe_dereverb, RoomSpec, StftWindow, WpeConfig,
};
use avwws::features::Waveform;
use avwws::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP_NAMES: [&str; 5] = ["speed", "reverb", "noise", "enhance", "clip_negatives"];

/// One resolved step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Step {
    /// Resampling ratio.
    Speed(f64),
    /// Simulated room with this rt60 in seconds.
    Reverb(f64),
    /// Additive noise at this SNR in dB.
    Noise(f64),
    /// Delay-and-sum (multi-channel input only) followed by WPE.
    Enhance,
    /// Crop negatives to at most this many seconds.
    ClipNegatives(f64),
}

impl Step {
    fn token(&self) -> String {
        match self {
            Step::Speed(r) => format!("sp{r}"),
            Step::Reverb(t) => format!("rv{t}"),
            Step::Noise(s) => format!("sn{s}"),
            Step::Enhance => "enh".into(),
            Step::ClipNegatives(s) => format!("cl{s}"),
        }
    }
}

/// Parses a chain and expands it into the cartesian product of its values.
/// An empty chain has no variants.
pub fn parse_chain(text: &str) -> Result<Vec<Vec<Step>>> {
    let mut variants: Vec<Vec<Step>> = vec![Vec::new()];
    let mut any = false;
    for item in text.split_whitespace() {
        any = true;
        let (name, args) = item.split_once(':').unwrap_or((item, ""));
        let values = || -> Result<Vec<f64>> {
            if args.is_empty() {
                return Err(Error::Config(format!("augment step {name} needs values, e.g. {name}:1.0")));
            }
            args.split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Config(format!("augment step {name}: bad value {v:?}")))
                })
                .collect()
        };
        let options: Vec<Step> = match name {
            "speed" => values()?
                .into_iter()
                .map(|r| if r > 0.0 { Ok(Step::Speed(r)) } else { Err(Error::Config(format!("speed ratio {r} must be positive"))) })
                .collect::<Result<_>>()?,
            "reverb" => values()?
                .into_iter()
                .map(|t| if t > 0.0 { Ok(Step::Reverb(t)) } else { Err(Error::Config(format!("rt60 {t} must be positive"))) })
                .collect::<Result<_>>()?,
            "noise" => values()?.into_iter().map(Step::Noise).collect(),
            "clip_negatives" => values()?
                .into_iter()
                .map(|s| if s > 0.0 { Ok(Step::ClipNegatives(s)) } else { Err(Error::Config(format!("clip length {s} must be positive"))) })
                .collect::<Result<_>>()?,
            "enhance" if args.is_empty() => vec![Step::Enhance],
            "enhance" => return Err(Error::Config("augment step enhance takes no values".into())),
            _ => {
                return Err(Error::Config(format!(
                    "unknown augment step {name:?}; valid steps: {}",
                    STEP_NAMES.join(", ")
                )))
            }
        };
        variants = variants
            .into_iter()
            .flat_map(|v| {
                options.iter().map(move |o| {
                    let mut v = v.clone();
                    v.push(*o);
                    v
                })
            })
            .collect();
    }
    Ok(if any { variants } else { Vec::new() })
}

/// Id suffix naming a variant's resolved steps.
pub fn fingerprint(steps: &[Step]) -> String {
    steps.iter().map(Step::token).collect::<Vec<_>>().join("-")
}

/// Combined tempo change of a variant.
pub fn speed_factor(steps: &[Step]) -> f64 {
    steps
        .iter()
        .map(|s| if let Step::Speed(r) = s { *r } else { 1.0 })
        .product()
}

/// Settings shared by every step of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSettings {
    /// Microphones in the simulated linear array.
    pub mics: usize,
    /// Metres between adjacent microphones.
    pub mic_spacing: f64,
    pub rir_max_order: usize,
    pub wpe: WpeConfig,
    pub stft_size: usize,
    pub stft_hop: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            mics: 1,
            mic_spacing: 0.05,
            rir_max_order: 6,
            wpe: WpeConfig::default(),
            stft_size: 512,
            stft_hop: 128,
        }
    }
}

/// Deterministic per-variant generator: FNV-1a over the output id, mixed
/// with the run seed.
pub fn variant_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(h ^ seed.rotate_left(29))
}

fn array_positions(settings: &ChainSettings, origin: [f64; 3]) -> Vec<[f64; 3]> {
    let half = (settings.mics as f64 - 1.0) / 2.0;
    (0..settings.mics)
        .map(|m| [origin[0] + (m as f64 - half) * settings.mic_spacing, origin[1], origin[2]])
        .collect()
}

fn random_room<R: Rng>(rt60: f64, settings: &ChainSettings, rng: &mut R) -> RoomSpec {
    let dims = [rng.random_range(4.0..8.0), rng.random_range(3.0..6.0), rng.random_range(2.5..3.5)];
    let span = settings.mic_spacing * settings.mics as f64;
    let centre = [
        rng.random_range(1.0 + span..dims[0] - 1.0 - span),
        rng.random_range(1.0..dims[1] - 1.0),
        rng.random_range(0.8..1.5),
    ];
    let source = [
        rng.random_range(0.5..dims[0] - 0.5),
        rng.random_range(0.5..dims[1] - 0.5),
        rng.random_range(1.0..2.0),
    ];
    RoomSpec {
        dimensions: dims,
        source,
        mics: array_positions(settings, centre),
        rt60,
        max_order: settings.rir_max_order,
    }
}

fn per_channel<F>(w: &Waveform, mut f: F) -> Result<Waveform>
where
    F: FnMut(&Waveform) -> Result<Waveform>,
{
    let chans = w
        .channels()
        .iter()
        .map(|c| Ok(f(&Waveform::mono(c.clone(), w.sample_rate())?)?.into_channels().remove(0)))
        .collect::<Result<Vec<_>>>()?;
    Waveform::new(chans, w.sample_rate())
}

/// Applies one variant to a waveform. `noise_pool` supplies noise
/// recordings for `noise` steps.
pub fn apply_variant<R: Rng>(
    w: &Waveform,
    label: u8,
    steps: &[Step],
    settings: &ChainSettings,
    noise_pool: &[Waveform],
    rng: &mut R,
) -> Result<Waveform> {
    let mut x = w.clone();
    for step in steps {
        x = match *step {
            Step::Speed(r) => speed_perturb(&x, r)?,
            Step::Reverb(rt60) => {
                let room = random_room(rt60, settings, rng);
                let h = simulate_rir(&room, x.sample_rate())?;
                let n = x.len();
                let wet = convolve_rir(&x, &h)?;
                Waveform::new(wet.into_channels().into_iter().map(|mut c| {
                    c.truncate(n);
                    c
                }).collect(), x.sample_rate())?
            }
            Step::Noise(snr) => {
                if noise_pool.is_empty() {
                    return Err(Error::Config("noise step needs at least one negative train utterance as noise".into()));
                }
                let noise = &noise_pool[rng.random_range(0..noise_pool.len())];
                per_channel(&x, |c| Ok(mix_noise_parts(c, noise, snr, rng)?.mixed))?
            }
            Step::Enhance => {
                let mono = if x.num_channels() > 1 {
                    let mics = array_positions(settings, [0.0; 3]);
                    if mics.len() != x.num_channels() {
                        return Err(Error::Config(format!(
                            "enhance expects {} channels (mics setting), got {}",
                            mics.len(),
                            x.num_channels()
                        )));
                    }
                    delay_and_sum_beamform(&x, &mics, 90.0)?
                } else {
                    x
                };
                let n = mono.len();
                let spec = stft(&mono, settings.stft_size, settings.stft_hop, StftWindow::SqrtHann)?;
                let out = istft(&wpe_dereverb(&spec, &settings.wpe)?)?;
                let mut c = out.into_channels().remove(0);
                c.resize(n, 0.0);
                Waveform::mono(c, mono.sample_rate())?
            }
            Step::ClipNegatives(seconds) if label == 0 => {
                let n = (seconds * x.sample_rate() as f64).round() as usize;
                clip_to_length(&x, n, rng)?
            }
            Step::ClipNegatives(_) => x,
        };
    }
    Ok(x)
}
