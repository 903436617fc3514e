//! Analytic gradients of every graph operation against central differences.

mod common;

use std::sync::Arc;

use avwws::tensor::{grad_check, multi_head_attention, AttentionWeights, ElementwiseFn, Graph, Tensor};
use common::grad_ops::{attention_case, op_cases, random, reduce, BrokenTanh};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

#[test]
fn every_op_matches_finite_differences_over_20_seeds() {
    for seed in 0..20 {
        for c in op_cases(seed) {
            let r = grad_check(&c.f, &c.inputs, EPS).unwrap();
            let tol = match c.name {
                "matmul" => 1e-6,
                "attention" => 1e-4,
                _ => 1e-5,
            };
            assert!(
                r.max_rel_error <= tol,
                "{} seed {seed}: rel error {:e} at {:?}",
                c.name,
                r.max_rel_error,
                r.worst
            );
        }
    }
}

#[test]
fn attention_shapes_match_finite_differences() {
    for (seed, (tq, tk, d, h)) in [(1, 1, 4, 1), (2, 5, 8, 4), (3, 2, 6, 3), (4, 6, 4, 4)].into_iter().enumerate() {
        let c = attention_case(seed as u64, tq, tk, d, h);
        let r = grad_check(&c.f, &c.inputs, EPS).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{tq}x{tk} d={d} h={h}: {:e}", r.max_rel_error);
    }
}

/// ReLU whose derivative on the positive side is off by a factor of two.
struct BrokenRelu;

impl ElementwiseFn for BrokenRelu {
    fn value(&self, x: f64) -> f64 {
        x.max(0.0)
    }
    fn derivative(&self, x: f64) -> f64 {
        if x > 0.0 {
            2.0
        } else {
            0.0
        }
    }
}

#[test]
fn relu_next_to_its_kink_is_scored_one_sided() {
    // 3e-6 is inside the +-1e-5 interval, so the central difference is 0.65.
    let x = Tensor::vector(vec![3e-6, -4e-6, 0.7]).unwrap();
    let relu = |g: &mut Graph, v: &[avwws::tensor::Var]| {
        let y = g.relu(v[0]);
        Ok(g.sum(y))
    };
    let r = grad_check(relu, std::slice::from_ref(&x), EPS).unwrap();
    assert_eq!(r.kinks, 2);
    assert!(r.max_rel_error < 1e-9, "{:e}", r.max_rel_error);

    let broken = |g: &mut Graph, v: &[avwws::tensor::Var]| {
        let y = g.map(v[0], Arc::new(BrokenRelu));
        Ok(g.sum(y))
    };
    let r = grad_check(broken, &[x], EPS).unwrap();
    assert!(r.max_rel_error > 0.3, "wrong slope hidden by kink handling: {:e}", r.max_rel_error);
}

#[test]
fn smooth_ops_report_no_kinks() {
    for c in op_cases(4) {
        if c.name == "relu" {
            continue;
        }
        assert_eq!(grad_check(&c.f, &c.inputs, EPS).unwrap().kinks, 0, "{}", c.name);
    }
}

#[test]
fn wrong_derivative_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[6]);
    let r = grad_check(
        |g, v| {
            let y = g.map(v[0], Arc::new(BrokenTanh));
            reduce(g, y, 3)
        },
        &[x],
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error > 1e-2, "mutation went unnoticed: {:e}", r.max_rel_error);
}

fn weights(g: &mut Graph, d: usize, seed: u64) -> AttentionWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = || g.param(random(&mut rng, &[d, d]));
    let (wq, wk, wv, wo) = (m(), m(), m(), m());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut b = || g.param(random(&mut rng, &[d]));
    AttentionWeights {
        wq,
        bq: b(),
        wk,
        bk: b(),
        wv,
        bv: b(),
        wo,
        bo: b(),
    }
}

#[test]
fn single_position_attention_is_value_projection() {
    let mut g = Graph::new();
    let w = weights(&mut g, 4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = g.constant(random(&mut rng, &[1, 4]));
    let k = g.constant(random(&mut rng, &[1, 4]));
    let v = g.constant(random(&mut rng, &[1, 4]));
    let a = multi_head_attention(&mut g, q, k, v, &w, 2).unwrap();
    let vp = g.linear(v, w.wv, w.bv).unwrap();
    let expect = g.linear(vp, w.wo, w.bo).unwrap();
    for (x, y) in g.value(a.output).data().iter().zip(g.value(expect).data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let mut g = Graph::new();
    let w = weights(&mut g, 4, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let row = random(&mut rng, &[1, 4]);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| row.data().to_vec()).collect();
    let k = g.constant(Tensor::from_rows(&rows).unwrap());
    let q = g.constant(random(&mut rng, &[3, 4]));
    let v = g.constant(random(&mut rng, &[5, 4]));
    let a = multi_head_attention(&mut g, q, k, v, &w, 2).unwrap();
    for &h in &a.weights {
        assert!(g.value(h).data().iter().all(|&p| (p - 0.2).abs() < 1e-12));
    }
}

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 2usize..8).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-50.0f64..50.0, r * c)))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one((r, c, data) in matrix_strategy()) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![r, c], data).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let out = g.value(y);
        prop_assert!(out.is_finite());
        for i in 0..r {
            let s: f64 = out.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised((r, c, data) in matrix_strategy()) {
        let spread = data.chunks(c).all(|row| {
            let m = row.iter().sum::<f64>() / c as f64;
            row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c as f64 > 1e-3
        });
        prop_assume!(spread);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![r, c], data).unwrap());
        let gain = g.constant(Tensor::full(&[c], 1.0));
        let bias = g.constant(Tensor::zeros(&[c]));
        let y = g.layer_norm(x, gain, bias, 1e-9).unwrap();
        let out = g.value(y);
        for i in 0..r {
            let row = out.row(i);
            let m = row.iter().sum::<f64>() / c as f64;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn ops_never_produce_nan((r, c, data) in matrix_strategy()) {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![r, c], data).unwrap());
        let s = g.sigmoid(x);
        let w = g.swish(x);
        let sm = g.softmax(x, 0).unwrap();
        let gain = g.constant(Tensor::full(&[c], 1.0));
        let bias = g.constant(Tensor::zeros(&[c]));
        let ln = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        let a = g.add(s, w).unwrap();
        let b = g.add(sm, ln).unwrap();
        let y = g.mul(a, b).unwrap();
        let total = g.sum(y);
        g.backward(total).unwrap();
        prop_assert!(g.value(total).is_finite());
        prop_assert!(g.grad(x).unwrap().iter().all(|v| v.is_finite()));
    }
}
