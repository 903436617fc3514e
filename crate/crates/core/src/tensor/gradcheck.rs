use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative discrepancy over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Coordinates whose difference interval straddles a kink; these were
    /// scored against the matching one-sided difference.
    pub kinks: usize,
}

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is ~0 are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Forward and backward differences further apart than this (relative) mean
/// a non-differentiable point lies within `eps`. On smooth functions they
/// differ by about `eps * f''`.
const KINK_GAP: f64 = 1e-3;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the scalar function `f` against central
/// differences at every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_coords(&f, inputs, eps, &coords)
}

/// Like [`grad_check`] but checks at most `per_input` randomly chosen
/// coordinates of each input.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = inputs
        .iter()
        .map(|t| {
            let mut idx = sample(&mut rng, t.len(), per_input.min(t.len())).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect::<Vec<_>>();
    check_coords(&f, inputs, eps, &coords)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

fn check_coords<F>(f: &F, inputs: &[Tensor], eps: f64, coords: &[Vec<usize>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        kinks: 0,
    };
    let centre = eval(f, inputs)?;
    let mut work = inputs.to_vec();
    for (i, idxs) in coords.iter().enumerate() {
        for &j in idxs {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(f, &work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(f, &work)?;
            work[i].data_mut()[j] = orig;
            let a = analytic[i][j];
            let mut err = rel_error(a, (plus - minus) / (2.0 * eps));
            // At a ReLU-style kink the central difference averages two
            // slopes. The analytic gradient must then equal one of them.
            let (fwd, bwd) = ((plus - centre) / eps, (centre - minus) / eps);
            if rel_error(fwd, bwd) > KINK_GAP {
                let one_sided = rel_error(a, fwd).min(rel_error(a, bwd));
                if one_sided < err {
                    err = one_sided;
                    report.kinks += 1;
                }
            }
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
