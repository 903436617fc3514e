//! Audio-visual wake word spotting.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a small reverse-mode autodiff engine over `f64` tensors,
//!   with a finite-difference gradient checker.
//! - [`features`]: log-mel filterbanks, global CMVN, SpecAugment and the
//!   binary feature-file format.
//! - [`augment`]: far-field simulation and enhancement (STFT, delay-and-sum
//!   beamforming, WPE dereverberation, image-source RIRs, speed perturbation,
//!   SNR-controlled noise mixing) plus WAV I/O.
//! - [`models`]: A-Transformer, A-Conformer and AV-Transformer with both
//!   fusion operators at both fusion sites, and the checkpoint format.
//! - [`training`]: CE and focal losses, Adam with linear warmup, and the
//!   two-stage CE then focal training loop.
//! - [`eval`]: confusion counts, FRR/FAR/score, threshold sweeps and the
//!   three-model majority vote.

pub mod augment;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
