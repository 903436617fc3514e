//! Far-field simulation and multi-channel enhancement.
//!
//! Enhancement: [`delay_and_sum_beamform`] followed by [`wpe_dereverb`] in the
//! STFT domain. Simulation: [`simulate_rir`] (image-source shoebox room),
//! [`convolve_rir`], [`speed_perturb`] and [`mix_noise`].

mod beamform;
mod convolve;
mod noise;
mod resample;
mod rir;
mod stft;
mod wav;
mod wpe;

pub use beamform::{delay_and_sum_beamform, SPEED_OF_SOUND};
pub use convolve::{convolve_rir, fft_convolve};
pub use noise::{clip_to_length, mix_noise, mix_noise_parts, power, NoiseMix};
pub use resample::{fractional_delay, speed_perturb};
pub use rir::{simulate_rir, RoomSpec};
pub use stft::{istft, stft, Spectrogram, StftWindow};
pub use wav::{read_wav, write_wav, WavFormat};
pub use wpe::{wpe_dereverb, WpeConfig};
