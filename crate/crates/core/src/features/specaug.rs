use rand::Rng;

use super::FeatureMatrix;

/// Mask counts and maximum widths. Widths are drawn uniformly from
/// `0..=max` (clamped to the matrix size).
#[derive(Clone, Debug, PartialEq)]
pub struct SpecAugmentConfig {
    pub n_time_masks: usize,
    pub max_time_width: usize,
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            n_time_masks: 2,
            max_time_width: 10,
            n_freq_masks: 2,
            max_freq_width: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAxis {
    /// A range of frames (rows).
    Time,
    /// A band of feature dimensions (columns).
    Freq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mask {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// Draws random masks and fills them with the mean of the input matrix.
pub fn spec_augment<R: Rng + ?Sized>(f: &FeatureMatrix, cfg: &SpecAugmentConfig, rng: &mut R) -> FeatureMatrix {
    let mut masks = Vec::with_capacity(cfg.n_time_masks + cfg.n_freq_masks);
    let mut draw = |axis, count: usize, max: usize, size: usize| {
        for _ in 0..count {
            let width = rng.random_range(0..=max.min(size));
            let start = rng.random_range(0..=size - width);
            masks.push(Mask { axis, start, width });
        }
    };
    draw(MaskAxis::Time, cfg.n_time_masks, cfg.max_time_width, f.frames());
    draw(MaskAxis::Freq, cfg.n_freq_masks, cfg.max_freq_width, f.dim());
    apply_masks(f, &masks)
}

/// Sets every masked cell to the mean of `f`; other cells are copied.
/// Masks running past the matrix edge are clipped.
pub fn apply_masks(f: &FeatureMatrix, masks: &[Mask]) -> FeatureMatrix {
    let fill = f.mean();
    let mut data = f.data().to_vec();
    let (frames, dim) = (f.frames(), f.dim());
    for m in masks {
        match m.axis {
            MaskAxis::Time => {
                for t in m.start.min(frames)..(m.start + m.width).min(frames) {
                    data[t * dim..(t + 1) * dim].fill(fill);
                }
            }
            MaskAxis::Freq => {
                for t in 0..frames {
                    for d in m.start.min(dim)..(m.start + m.width).min(dim) {
                        data[t * dim + d] = fill;
                    }
                }
            }
        }
    }
    f.with_data(data)
}
