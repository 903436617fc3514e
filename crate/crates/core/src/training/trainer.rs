use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{adam_step, lr_schedule, AdamState, Example, LossKind, TrainConfig};
use crate::error::{Error, Result};
use crate::features::spec_augment;
use crate::models::{Params, WwsModel};
use crate::tensor::{Graph, PointwiseLoss, Tensor};

/// One line of training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRecord {
    /// 1-based step within the stage.
    pub step: u64,
    pub stage: u32,
    /// Mean loss of the batch before the update.
    pub loss: f64,
    pub lr: f64,
}

/// `step<TAB>stage<TAB>loss<TAB>lr`, one record per line.
pub fn format_history(records: &[HistoryRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}\t{}\t{:?}\t{:?}\n", r.step, r.stage, r.loss, r.lr))
        .collect()
}

pub fn parse_history(text: &str) -> Result<Vec<HistoryRecord>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Input(format!("history line {}: {line:?}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let [step, stage, loss, lr] = f.as_slice() else {
                return Err(bad());
            };
            Ok(HistoryRecord {
                step: step.parse().map_err(|_| bad())?,
                stage: stage.parse().map_err(|_| bad())?,
                loss: loss.parse().map_err(|_| bad())?,
                lr: lr.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Position in a two-stage run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    /// 1 or 2.
    pub stage: u32,
    /// Steps completed in the current stage.
    pub step: u64,
    pub adam: AdamState,
}

const STATE_PREFIXES: [&str; 3] = ["adam.m.", "adam.v.", "train."];

/// Training state as named tensors, to be stored next to the model
/// parameters in one checkpoint.
pub fn training_state_params(state: &TrainState) -> Params {
    let mut p = Params::new();
    for (name, t) in state.adam.m.iter() {
        p.insert(format!("adam.m.{name}"), t.clone());
    }
    for (name, t) in state.adam.v.iter() {
        p.insert(format!("adam.v.{name}"), t.clone());
    }
    let scalar = |v: u64| Tensor::scalar(v as f64);
    p.insert("train.stage", scalar(state.stage as u64));
    p.insert("train.step", scalar(state.step));
    p.insert("train.adam_t", scalar(state.adam.t));
    p
}

/// Splits a checkpoint into model parameters and, if present, the
/// training state.
pub fn split_training_state(all: Params) -> Result<(Params, Option<TrainState>)> {
    let mut model = Params::new();
    let mut state = Params::new();
    for (name, t) in all {
        if STATE_PREFIXES.iter().any(|p| name.starts_with(p)) {
            state.insert(name, t);
        } else {
            model.insert(name, t);
        }
    }
    if state.is_empty() {
        return Ok((model, None));
    }
    let counter = |name: &str| -> Result<u64> {
        let v = state.get(name)?.item();
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Contract(format!("{name} is not a count: {v}")));
        }
        Ok(v as u64)
    };
    let stage = counter("train.stage")? as u32;
    if !(1..=2).contains(&stage) {
        return Err(Error::Contract(format!("checkpoint stage {stage} is not 1 or 2")));
    }
    let ts = TrainState {
        stage,
        step: counter("train.step")?,
        adam: AdamState {
            m: state.with_prefix("adam.m."),
            v: state.with_prefix("adam.v."),
            t: counter("train.adam_t")?,
        },
    };
    Ok((model, Some(ts)))
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x9e3779b97f4a7c15, |acc, &p| mix(acc ^ p.wrapping_add(0x9e3779b97f4a7c15)))
}

/// Example indices of the batch for 1-based `step` of a stage: batches
/// walk through a fresh permutation of the data each epoch.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, stage: u32, step: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size) as u64;
    let b = step - 1;
    let epoch = b / per_epoch;
    let within = (b % per_epoch) as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, stage as u64, epoch])));
    perm[within * batch_size..((within + 1) * batch_size).min(n)].to_vec()
}

/// Mean loss and gradient (keyed by parameter name) over a batch.
fn batch_gradient(
    model: &WwsModel,
    batch: &[&Example],
    loss: &std::sync::Arc<dyn PointwiseLoss>,
    augment: impl Fn(usize, &Example) -> Option<crate::features::FeatureMatrix> + Sync,
) -> Result<(f64, Params)> {
    let per_example: Vec<Result<(f64, Vec<(String, Vec<f64>)>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let aug = augment(i, ex);
            let audio = aug.as_ref().unwrap_or(&ex.audio);
            let p = model.forward(&mut g, &bound, audio, ex.video.as_ref())?;
            let l = g.loss(p, &[ex.label as f64], loss.clone())?;
            g.backward(l)?;
            let grads = bound
                .iter()
                .filter(|(_, v)| g.requires_grad(**v))
                .map(|(name, v)| {
                    let grad = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(*v).len()]);
                    (name.clone(), grad)
                })
                .collect();
            Ok((g.value(l).item(), grads))
        })
        .collect();

    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut sums: Vec<(String, Vec<f64>)> = Vec::new();
    for r in per_example {
        let (l, grads) = r?;
        total += l;
        if sums.is_empty() {
            sums = grads;
        } else {
            for ((_, acc), (_, g)) in sums.iter_mut().zip(&grads) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
    let mut out = Params::new();
    for (name, mut g) in sums {
        g.iter_mut().for_each(|v| *v /= n);
        let shape = model.params().get(&name)?.shape().to_vec();
        out.insert(name, Tensor::new(shape, g)?);
    }
    Ok((total / n, out))
}

/// Resumable two-stage training loop.
pub struct Trainer<'a> {
    model: WwsModel,
    data: &'a [Example],
    stages: [TrainConfig; 2],
    state: TrainState,
    history: Vec<HistoryRecord>,
}

/// Final model and per-step history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: WwsModel,
    pub history: Vec<HistoryRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: WwsModel, data: &'a [Example], stage1: TrainConfig, stage2: TrainConfig) -> Result<Self> {
        let state = TrainState {
            stage: 1,
            step: 0,
            adam: AdamState::default(),
        };
        Self::resume(model, state, data, stage1, stage2)
    }

    /// Continues from a saved state with the same data and configs.
    pub fn resume(
        model: WwsModel,
        state: TrainState,
        data: &'a [Example],
        stage1: TrainConfig,
        stage2: TrainConfig,
    ) -> Result<Self> {
        stage1.validate()?;
        stage2.validate()?;
        if stage1.loss != LossKind::Ce || stage2.loss != LossKind::Focal {
            return Err(Error::Config("stage 1 must use ce loss and stage 2 focal loss".into()));
        }
        if data.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        if model.config().is_audio_visual() && data.iter().any(|e| e.video.is_none()) {
            return Err(Error::Config("av-transformer training needs video features for every example".into()));
        }
        if !(1..=2).contains(&state.stage) {
            return Err(Error::Contract(format!("invalid training stage {}", state.stage)));
        }
        Ok(Self {
            model,
            data,
            stages: [stage1, stage2],
            state,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &WwsModel {
        &self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    /// Model parameters and training state, ready for a checkpoint.
    pub fn checkpoint_params(&self) -> Params {
        let mut p = self.model.params().clone();
        for (name, t) in training_state_params(&self.state) {
            p.insert(name, t);
        }
        p
    }

    fn settle(&mut self) {
        if self.state.stage == 1 && self.state.step >= self.stages[0].max_steps {
            self.state = TrainState {
                stage: 2,
                step: 0,
                adam: AdamState::default(),
            };
        }
    }

    pub fn is_finished(&mut self) -> bool {
        self.settle();
        self.state.stage == 2 && self.state.step >= self.stages[1].max_steps
    }

    /// One optimiser step; returns false once both stages are complete.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let stage = self.state.stage;
        let cfg = &self.stages[stage as usize - 1];
        let step = self.state.step + 1;
        let lr = lr_schedule(step, cfg);
        let idx = batch_indices(self.data.len(), cfg.batch_size, cfg.seed, stage, step);
        let batch: Vec<&Example> = idx.iter().map(|&i| &self.data[i]).collect();
        let spec = cfg.spec_augment.clone();
        let seed = cfg.seed;
        let augment = |i: usize, ex: &Example| {
            spec.as_ref().map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, stage as u64, step, i as u64, 1]));
                spec_augment(&ex.audio, s, &mut rng)
            })
        };
        let (loss, grads) = batch_gradient(&self.model, &batch, &cfg.loss_fn(), augment)?;
        if !loss.is_finite() || grads.iter().any(|(_, g)| !g.is_finite()) {
            return Err(Error::Divergence { stage, step });
        }
        adam_step(self.model.params_mut(), &grads, &mut self.state.adam, lr)?;
        if self.model.params().iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Divergence { stage, step });
        }
        self.state.step = step;
        self.history.push(HistoryRecord { step, stage, loss, lr });
        log::debug!("stage {stage} step {step}: loss {loss:.6} lr {lr:.3e}");
        Ok(true)
    }

    /// Runs at most `n` steps.
    pub fn run_steps(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            if !self.step()? {
                break;
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            history: self.history,
        }
    }
}

/// Stage 1 with cross-entropy, then stage 2 with focal loss starting from
/// the stage-1 parameters (optimizer state and warmup restart).
pub fn two_stage_train(
    model: WwsModel,
    data: &[Example],
    stage1: TrainConfig,
    stage2: TrainConfig,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, data, stage1, stage2)?;
    t.run()?;
    Ok(t.into_outcome())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        for (n, b) in [(10usize, 3usize), (16, 4), (5, 8)] {
            let per_epoch = n.div_ceil(b) as u64;
            for epoch in 0..3 {
                let mut seen: Vec<usize> = (1..=per_epoch)
                    .flat_map(|s| batch_indices(n, b, 7, 1, epoch * per_epoch + s))
                    .collect();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
        assert_ne!(batch_indices(16, 4, 7, 1, 1), batch_indices(16, 4, 8, 1, 1));
        assert_eq!(batch_indices(16, 4, 7, 1, 3), batch_indices(16, 4, 7, 1, 3));
    }

    #[test]
    fn history_round_trip() {
        let h = vec![
            HistoryRecord {
                step: 1,
                stage: 1,
                loss: 0.5,
                lr: 1e-4,
            },
            HistoryRecord {
                step: 2,
                stage: 2,
                loss: 1.0 / 3.0,
                lr: 2e-4,
            },
        ];
        let text = format_history(&h);
        assert!(text.starts_with("1\t1\t0.5\t0.0001\n"));
        assert_eq!(parse_history(&text).unwrap(), h);
        assert!(parse_history("1\t2\tx\t3").is_err());
    }

    #[test]
    fn state_params_round_trip() {
        let mut adam = AdamState::default();
        adam.m.insert("head.bias", Tensor::scalar(0.25));
        adam.v.insert("head.bias", Tensor::scalar(1e-9));
        adam.t = 17;
        let st = TrainState { stage: 2, step: 5, adam };
        let mut all = Params::new();
        all.insert("head.bias", Tensor::scalar(3.0));
        for (n, t) in training_state_params(&st) {
            all.insert(n, t);
        }
        let (model, back) = split_training_state(all).unwrap();
        assert_eq!(model.len(), 1);
        assert_eq!(back.unwrap(), st);
    }
}
