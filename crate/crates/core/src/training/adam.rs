use super::{PostWarmup, TrainConfig};
use crate::error::{Error, Result};
use crate::models::Params;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate for 1-based `step`: linear ramp from 0 to `lr_peak` over
/// `warmup_steps`, then constant (or a linear decay to zero at `max_steps`).
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_steps;
    if w > 0 && step < w {
        return cfg.lr_peak * step as f64 / w as f64;
    }
    match cfg.post_warmup {
        PostWarmup::Constant => cfg.lr_peak,
        PostWarmup::LinearDecay => {
            let span = cfg.max_steps.saturating_sub(w).max(1) as f64;
            let left = cfg.max_steps.saturating_sub(step) as f64;
            cfg.lr_peak * (left / span).min(1.0)
        }
    }
}

/// First and second moment estimates, keyed like the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    /// Number of updates applied.
    pub t: u64,
}

/// One Adam update with bias correction for every parameter named in
/// `grads`. Moment entries are created on first use.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        for moments in [&state.m, &state.v] {
            if let Ok(m) = moments.get(name) {
                if m.shape() != g.shape() {
                    return Err(Error::Contract(format!("optimizer state for {name} has the wrong shape")));
                }
            }
        }
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    for (name, g) in grads.iter() {
        if !state.m.contains(name) {
            state.m.insert(name.clone(), Tensor::zeros(g.shape()));
            state.v.insert(name.clone(), Tensor::zeros(g.shape()));
        }
        let m = state.m.get_mut(name)?.data_mut();
        let v = state.v.get_mut(name)?.data_mut();
        let p = params.get_mut(name)?.data_mut();
        for i in 0..g.len() {
            let gi = g.data()[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
