//! Command-line pipeline around the `avwws` core: synthetic corpus
//! generation, featurization, augmentation, training, scoring and voting.

pub mod chain;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod settings;
pub mod synth;
