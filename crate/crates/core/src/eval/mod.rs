//! Confusion counts, FRR/FAR/score, threshold sweeps and the three-model
//! majority vote.

mod scores;

pub use scores::{
    format_scores, parse_labels, parse_scores, read_labels, read_scores, write_labels, write_scores, ScoreList,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// FN / (FN + TP)
    pub frr: f64,
    /// FP / (FP + TN)
    pub far: f64,
    /// frr + far
    pub score: f64,
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::Input(format!("label must be 0 or 1, got {l}"))),
        None => Ok(()),
    }
}

/// Predicts 1 when `score >= threshold`.
pub fn predict(score: f64, threshold: f64) -> u8 {
    u8::from(score >= threshold)
}

pub fn counts_from_predictions(predictions: &[u8], labels: &[u8]) -> Result<EvalCounts> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    let mut c = EvalCounts::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn confusion_counts(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalCounts> {
    let predictions: Vec<u8> = scores.iter().map(|&s| predict(s, threshold)).collect();
    counts_from_predictions(&predictions, labels)
}

pub fn metrics(c: &EvalCounts) -> Result<Metrics> {
    let pos = c.fn_ + c.tp;
    let neg = c.fp + c.tn;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need at least one positive and one negative label, got {pos} and {neg}"
        )));
    }
    let frr = c.fn_ as f64 / pos as f64;
    let far = c.fp as f64 / neg as f64;
    Ok(Metrics {
        frr,
        far,
        score: frr + far,
    })
}

/// Metrics at every threshold of `grid`, plus the index of the lowest
/// score (the lowest threshold among ties).
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub points: Vec<(f64, Metrics)>,
    pub best: usize,
}

impl Sweep {
    pub fn best_threshold(&self) -> f64 {
        self.points[self.best].0
    }

    pub fn best_metrics(&self) -> Metrics {
        self.points[self.best].1
    }
}

pub fn threshold_sweep(scores: &[f64], labels: &[u8], grid: &[f64]) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let points = grid
        .iter()
        .map(|&t| Ok((t, metrics(&confusion_counts(scores, labels, t)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..points.len())
        .min_by(|&a, &b| {
            points[a]
                .1
                .score
                .total_cmp(&points[b].1.score)
                .then(points[a].0.total_cmp(&points[b].0))
        })
        .expect("non-empty grid");
    Ok(Sweep { points, best })
}

/// `n + 1` evenly spaced thresholds on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Mode of three binary decisions.
pub fn majority_vote(r1: u8, r2: u8, r3: u8) -> u8 {
    u8::from(u32::from(r1 > 0) + u32::from(r2 > 0) + u32::from(r3 > 0) >= 2)
}

/// Binarises each model's scores at its own threshold, votes per
/// utterance and scores the votes against `labels`. All lists must list
/// the same ids in the same order.
pub fn ensemble_eval(lists: [&ScoreList; 3], thresholds: [f64; 3], labels: &ScoreList) -> Result<Metrics> {
    let votes = ensemble_votes(lists, thresholds, labels)?;
    let y: Vec<u8> = labels.values.iter().map(|&v| v as u8).collect();
    metrics(&counts_from_predictions(&votes, &y)?)
}

/// Per-utterance majority decisions.
pub fn ensemble_votes(lists: [&ScoreList; 3], thresholds: [f64; 3], labels: &ScoreList) -> Result<Vec<u8>> {
    for (k, l) in lists.iter().enumerate() {
        if let Some(i) = (0..l.ids.len().max(labels.ids.len())).find(|&i| l.ids.get(i) != labels.ids.get(i)) {
            let id = labels.ids.get(i).or(l.ids.get(i)).cloned().unwrap_or_default();
            return Err(Error::Contract(format!(
                "score list {} is misaligned with the labels at utterance {id:?} (position {i})",
                k + 1
            )));
        }
    }
    Ok((0..labels.ids.len())
        .map(|i| {
            let r: Vec<u8> = (0..3).map(|k| predict(lists[k].values[i], thresholds[k])).collect();
            majority_vote(r[0], r[1], r[2])
        })
        .collect())
}
