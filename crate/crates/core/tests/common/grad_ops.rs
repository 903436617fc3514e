//! Finite-difference cases for every graph operation, shared by the
//! gradient tests and the acceptance suite.

#![allow(dead_code)]

use std::sync::Arc;

use avwws::tensor::{multi_head_attention, AttentionWeights, ElementwiseFn, Graph, PointwiseLoss, Tensor, Var};
use avwws::training::{CeLoss, FocalLoss};
use avwws::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// `sum(y ⊙ w)` for a fixed random `w`, so every output entry matters.
pub fn reduce(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random(&mut rng, g.shape(y)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub struct Tanh;

impl ElementwiseFn for Tanh {
    fn value(&self, x: f64) -> f64 {
        x.tanh()
    }
    fn derivative(&self, x: f64) -> f64 {
        1.0 - x.tanh().powi(2)
    }
}

/// Same value as [`Tanh`] with a deliberately wrong derivative.
pub struct BrokenTanh;

impl ElementwiseFn for BrokenTanh {
    fn value(&self, x: f64) -> f64 {
        x.tanh()
    }
    fn derivative(&self, x: f64) -> f64 {
        1.0 - x.tanh()
    }
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

pub fn attention_case(seed: u64, tq: usize, tk: usize, d: usize, heads: usize) -> OpCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![random(&mut rng, &[tq, d]), random(&mut rng, &[tk, d]), random(&mut rng, &[tk, d])];
    for _ in 0..4 {
        inputs.push(random(&mut rng, &[d, d]));
        inputs.push(random(&mut rng, &[d]));
    }
    case("attention", inputs, move |g, v| {
        let w = AttentionWeights {
            wq: v[3],
            bq: v[4],
            wk: v[5],
            bk: v[6],
            wv: v[7],
            bv: v[8],
            wo: v[9],
            bo: v[10],
        };
        let a = multi_head_attention(g, v[0], v[1], v[2], &w, heads)?;
        reduce(g, a.output, seed)
    })
}

pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let s = seed;
    let targets: Vec<f64> = (0..5).map(|i| (i % 2) as f64).collect();
    let probs = Tensor::vector((0..5).map(|_| r.random_range(0.05..0.95)).collect()).unwrap();
    let t2 = targets.clone();
    vec![
        case("matmul", vec![random(r, &[3, 4]), random(r, &[4, 5])], move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            reduce(g, y, s)
        }),
        case("transpose", vec![random(r, &[3, 4])], move |g, v| {
            let y = g.transpose(v[0])?;
            reduce(g, y, s)
        }),
        case("add", vec![random(r, &[2, 3, 2]), random(r, &[2, 3, 2])], move |g, v| {
            let y = g.add(v[0], v[1])?;
            reduce(g, y, s)
        }),
        case("mul", vec![random(r, &[4, 3]), random(r, &[4, 3])], move |g, v| {
            let y = g.mul(v[0], v[1])?;
            reduce(g, y, s)
        }),
        case("scale", vec![random(r, &[5])], move |g, v| {
            let y = g.scale(v[0], -1.7);
            reduce(g, y, s)
        }),
        case("scale_by", vec![random(r, &[3, 2]), random(r, &[1])], move |g, v| {
            let y = g.scale_by(v[0], v[1])?;
            reduce(g, y, s)
        }),
        case("add_bias", vec![random(r, &[2, 3, 4]), random(r, &[4])], move |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            reduce(g, y, s)
        }),
        case("linear", vec![random(r, &[3, 4]), random(r, &[4, 2]), random(r, &[2])], move |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            reduce(g, y, s)
        }),
        case("sigmoid", vec![random(r, &[3, 3])], move |g, v| {
            let y = g.sigmoid(v[0]);
            reduce(g, y, s)
        }),
        case("swish", vec![random(r, &[3, 3])], move |g, v| {
            let y = g.swish(v[0]);
            reduce(g, y, s)
        }),
        case("relu", vec![away_from_zero(r, &[3, 3])], move |g, v| {
            let y = g.relu(v[0]);
            reduce(g, y, s)
        }),
        case("map", vec![random(r, &[4])], move |g, v| {
            let y = g.map(v[0], Arc::new(Tanh));
            reduce(g, y, s)
        }),
        case("glu", vec![random(r, &[3, 6])], move |g, v| {
            let y = g.glu(v[0])?;
            reduce(g, y, s)
        }),
        case("softmax_rows", vec![random(r, &[3, 4])], move |g, v| {
            let y = g.softmax(v[0], 1)?;
            reduce(g, y, s)
        }),
        case("softmax_cols", vec![random(r, &[3, 4])], move |g, v| {
            let y = g.softmax(v[0], 0)?;
            reduce(g, y, s)
        }),
        case("layer_norm", vec![random(r, &[3, 5]), random(r, &[5]), random(r, &[5])], move |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            reduce(g, y, s)
        }),
        case("conv2d", vec![random(r, &[7, 6, 2]), random(r, &[3, 3, 2, 2])], move |g, v| {
            let y = g.conv2d(v[0], v[1], (2, 1))?;
            reduce(g, y, s)
        }),
        case("depthwise_conv1d", vec![random(r, &[6, 3]), random(r, &[5, 3])], move |g, v| {
            let y = g.depthwise_conv1d(v[0], v[1])?;
            reduce(g, y, s)
        }),
        case("reshape", vec![random(r, &[2, 3, 2])], move |g, v| {
            let y = g.reshape(v[0], vec![3, 4])?;
            reduce(g, y, s)
        }),
        case("slice_cols", vec![random(r, &[3, 5])], move |g, v| {
            let y = g.slice_cols(v[0], 1, 4)?;
            reduce(g, y, s)
        }),
        case("concat_cols", vec![random(r, &[3, 2]), random(r, &[3, 1])], move |g, v| {
            let y = g.concat_cols(&[v[0], v[1], v[0]])?;
            reduce(g, y, s)
        }),
        case("concat_rows", vec![random(r, &[1, 3]), random(r, &[2, 3])], move |g, v| {
            let y = g.concat_rows(&[v[0], v[1]])?;
            reduce(g, y, s)
        }),
        case("gather_rows", vec![random(r, &[4, 2])], move |g, v| {
            let y = g.gather_rows(v[0], &[3, 0, 3, 1])?;
            reduce(g, y, s)
        }),
        case("sum", vec![random(r, &[3, 2])], move |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        }),
        case("loss_ce", vec![probs.clone()], move |g, v| g.loss(v[0], &targets, Arc::new(CeLoss))),
        case("loss_focal", vec![probs], move |g, v| {
            let l: Arc<dyn PointwiseLoss> = Arc::new(FocalLoss { gamma: 2.0, alpha: 0.25 });
            g.loss(v[0], &t2, l)
        }),
        attention_case(seed, 3, 4, 4, 2),
    ]
}
