//! Losses, optimiser and the two-stage (cross-entropy, then focal)
//! training loop.

mod adam;
mod loss;
mod trainer;

pub use adam::{adam_step, lr_schedule, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{ce_loss, ce_loss_batch, focal_loss, focal_loss_batch, CeLoss, FocalLoss, PROB_CLAMP};
pub use trainer::{
    batch_indices, format_history, parse_history, split_training_state, training_state_params, two_stage_train,
    HistoryRecord, TrainOutcome, TrainState, Trainer,
};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, SpecAugmentConfig};
use crate::tensor::PointwiseLoss;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Ce,
    Focal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostWarmup {
    Constant,
    /// Linear decay to zero at `max_steps`.
    LinearDecay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub post_warmup: PostWarmup,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Applied to the audio features of every training example.
    pub spec_augment: Option<SpecAugmentConfig>,
}

impl TrainConfig {
    /// lr 1e-5 warmed up over 10,000 steps, batch 32.
    pub fn full_scale(loss: LossKind) -> Self {
        Self {
            lr_peak: 1e-5,
            warmup_steps: 10_000,
            batch_size: 32,
            max_steps: 100_000,
            ..Self::desk(loss)
        }
    }

    /// Settings for the synthetic desk-scale runs.
    pub fn desk(loss: LossKind) -> Self {
        Self {
            loss,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            lr_peak: 1e-3,
            warmup_steps: 50,
            post_warmup: PostWarmup::Constant,
            batch_size: 8,
            max_steps: 300,
            seed: 0,
            spec_augment: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_peak > 0.0) || !self.lr_peak.is_finite() {
            return Err(Error::Config(format!("lr_peak must be positive, got {}", self.lr_peak)));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!("focal_gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return Err(Error::Config(format!("focal_alpha must be in (0, 1], got {}", self.focal_alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_fn(&self) -> Arc<dyn PointwiseLoss> {
        match self.loss {
            LossKind::Ce => Arc::new(CeLoss),
            LossKind::Focal => Arc::new(FocalLoss {
                gamma: self.focal_gamma,
                alpha: self.focal_alpha,
            }),
        }
    }
}

/// One labelled utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub audio: FeatureMatrix,
    pub video: Option<FeatureMatrix>,
    pub label: u8,
}

impl Example {
    pub fn new(audio: FeatureMatrix, video: Option<FeatureMatrix>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Input(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Self { audio, video, label })
    }
}
