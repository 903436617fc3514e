//! Finite-difference check of a full model's loss with respect to its
//! parameters, on a sample of coordinates per parameter tensor.

#![allow(dead_code)]

use std::sync::Arc;

use avwws::features::FeatureMatrix;
use avwws::models::{BoundParams, WwsModel};
use avwws::tensor::{grad_check_sampled, GradCheckReport, Tensor};
use avwws::training::CeLoss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Copy of `model` with every bias moved off zero. Zero-initialised biases
/// can leave ReLU inputs exactly at the kink, where the one-sided
/// derivative and a central difference legitimately disagree.
pub fn with_random_biases(model: &WwsModel, seed: u64) -> WwsModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = model.clone();
    for (name, t) in m.params_mut().iter_mut() {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }
    m
}

pub fn model_grad_check(
    model: &WwsModel,
    audio: &FeatureMatrix,
    video: Option<&FeatureMatrix>,
    label: u8,
    per_tensor: usize,
    seed: u64,
) -> GradCheckReport {
    let model = &with_random_biases(model, seed);
    let names: Vec<String> = model.params().names().cloned().collect();
    let inputs: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
    let f = |g: &mut avwws::tensor::Graph, vars: &[avwws::tensor::Var]| {
        let bound: BoundParams = names.iter().cloned().zip(vars.iter().copied()).collect();
        let p = model.forward(g, &bound, audio, video)?;
        g.loss(p, &[label as f64], Arc::new(CeLoss))
    };
    grad_check_sampled(f, &inputs, 1e-5, per_tensor, seed).expect("model evaluates")
}
