use crate::tensor::PointwiseLoss;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn in_range(p: f64) -> bool {
    (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p)
}

/// Binary cross-entropy `-[y ln p + (1-y) ln(1-p)]`.
pub fn ce_loss(p: f64, label: u8) -> f64 {
    let p = clamp(p);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `-α_t (1-p_t)^γ ln p_t` with `p_t`, `α_t` taken from the positive class
/// when `label == 1` and from the negative class otherwise.
pub fn focal_loss(p: f64, label: u8, gamma: f64, alpha: f64) -> f64 {
    let p = clamp(p);
    let (pt, at) = if label == 1 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

pub fn ce_loss_batch(ps: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(ps.len(), labels.len());
    ps.iter().zip(labels).map(|(&p, &y)| ce_loss(p, y)).sum::<f64>() / ps.len() as f64
}

pub fn focal_loss_batch(ps: &[f64], labels: &[u8], gamma: f64, alpha: f64) -> f64 {
    assert_eq!(ps.len(), labels.len());
    ps.iter()
        .zip(labels)
        .map(|(&p, &y)| focal_loss(p, y, gamma, alpha))
        .sum::<f64>()
        / ps.len() as f64
}

fn label_of(target: f64) -> u8 {
    u8::from(target >= 0.5)
}

/// Cross-entropy as a graph loss node.
#[derive(Clone, Copy, Debug, Default)]
pub struct CeLoss;

impl PointwiseLoss for CeLoss {
    fn loss(&self, p: f64, target: f64) -> f64 {
        ce_loss(p, label_of(target))
    }

    fn dloss(&self, p: f64, target: f64) -> f64 {
        if !in_range(p) {
            return 0.0;
        }
        if label_of(target) == 1 {
            -1.0 / p
        } else {
            1.0 / (1.0 - p)
        }
    }
}

/// Focal loss as a graph loss node.
#[derive(Clone, Copy, Debug)]
pub struct FocalLoss {
    pub gamma: f64,
    pub alpha: f64,
}

impl PointwiseLoss for FocalLoss {
    fn loss(&self, p: f64, target: f64) -> f64 {
        focal_loss(p, label_of(target), self.gamma, self.alpha)
    }

    fn dloss(&self, p: f64, target: f64) -> f64 {
        if !in_range(p) {
            return 0.0;
        }
        let positive = label_of(target) == 1;
        let (pt, at) = if positive { (p, self.alpha) } else { (1.0 - p, 1.0 - self.alpha) };
        let q = 1.0 - pt;
        let mut d = -q.powf(self.gamma) / pt;
        if self.gamma != 0.0 {
            d += self.gamma * q.powf(self.gamma - 1.0) * pt.ln();
        }
        let d = at * d;
        if positive {
            d
        } else {
            -d
        }
    }
}
