//! Model-level properties: parameter counts, degenerate fusion
//! equivalences, class-token isolation and full-model gradients.

mod common;

use avwws::features::{FeatureKind, FeatureMatrix};
use avwws::models::*;
use avwws::tensor::{grad_check, Graph, Tensor};
use common::model_grad::model_grad_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(frames: usize, dim: usize, seed: u64, kind: FeatureKind) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let shift = if kind == FeatureKind::Audio { 0.01 } else { 0.04 };
    FeatureMatrix::new(data, frames, dim, shift, kind).unwrap()
}

/// Parameter count written out from the architecture description.
fn expected_count(cfg: &ModelConfig) -> usize {
    let d = cfg.encoder.hidden;
    let f = cfg.encoder.ffn;
    let frontend = |c: &ConvFrontendConfig| {
        let (c1, c2) = (c.conv1.channels, c.conv2.channels);
        let k1 = c.conv1.kernel.0 * c.conv1.kernel.1;
        let k2 = c.conv2.kernel.0 * c.conv2.kernel.1;
        let mut width = c.input_dim;
        for l in [c.conv1, c.conv2] {
            width = (width - l.kernel.1) / l.stride.1 + 1;
        }
        (k1 * c1 + c1) + (k2 * c1 * c2 + c2) + (width * c2 * d + d)
    };
    let ln = 2 * d;
    let attn = 4 * (d * d + d);
    let ffn = (d * f + f) + (f * d + d);
    let block = match cfg.encoder.kind {
        EncoderKind::Transformer => 2 * ln + attn + ffn,
        EncoderKind::Conformer => {
            let conv = ln + (d * 2 * d + 2 * d) + (cfg.encoder.conv_kernel * d + d) + (d * d + d);
            2 * (ln + ffn) + (ln + attn) + conv + ln
        }
    };
    let branch = |fc: &ConvFrontendConfig| frontend(fc) + d + cfg.encoder.n_blocks * block;
    let head = d + 1;
    let mut total = branch(&cfg.audio_frontend) + head;
    if let (Some(v), Some(fusion)) = (&cfg.video_frontend, &cfg.fusion) {
        total += match fusion.site {
            FusionSite::Attention => branch(v),
            FusionSite::Conv => frontend(v),
        };
        if fusion.operator == FusionOperator::WeightedSum {
            total += 2;
        }
    }
    total
}

fn av(site: FusionSite, operator: FusionOperator) -> ModelConfig {
    let mut c = ModelConfig::desk(ModelKind::AvTransformer, 63, 8);
    c.fusion = Some(FusionMode::new(site, operator));
    c
}

#[test]
fn full_scale_parameter_count_matches_closed_form() {
    let cfg = ModelConfig::full_scale(ModelKind::ATransformer, 63, 8);
    assert_eq!((cfg.encoder.n_blocks, cfg.encoder.n_heads, cfg.encoder.hidden, cfg.encoder.ffn), (4, 8, 512, 2048));
    let m = WwsModel::new(cfg.clone(), 0).unwrap();
    assert_eq!(m.num_params(), expected_count(&cfg));
    // 4 blocks of 4·(512² + 512) + 4·512 + 2·512·2048 + 2048 + 512 weights.
    let block = 4 * (512 * 512 + 512) + 4 * 512 + 2 * 512 * 2048 + 2048 + 512;
    assert_eq!(block, 3_152_384);
    assert!(m.num_params() > 4 * block);
}

#[test]
fn desk_parameter_counts_match_closed_form() {
    let mut configs = vec![
        ModelConfig::desk(ModelKind::ATransformer, 63, 8),
        ModelConfig::desk(ModelKind::AConformer, 63, 8),
        ModelConfig::full_scale(ModelKind::AConformer, 63, 8),
    ];
    for site in [FusionSite::Conv, FusionSite::Attention] {
        for op in [FusionOperator::WeightedSum, FusionOperator::Product] {
            configs.push(av(site, op));
        }
    }
    for cfg in configs {
        let m = WwsModel::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.num_params(), expected_count(&cfg), "{:?} {:?}", cfg.kind, cfg.fusion);
    }
}

#[test]
fn attention_site_unit_weights_equal_audio_only_model() {
    let mut cfg = av(FusionSite::Attention, FusionOperator::WeightedSum);
    cfg.fusion = Some(FusionMode::fixed_weights(FusionSite::Attention, 1.0, 0.0));
    let av_model = WwsModel::new(cfg, 4).unwrap();
    let audio_cfg = ModelConfig::desk(ModelKind::ATransformer, 63, 8);
    let audio_params: Params = av_model
        .params()
        .iter()
        .filter(|(n, _)| !n.contains("video") && !n.starts_with("fusion."))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let a_model = WwsModel::from_params(audio_cfg, audio_params).unwrap();
    for seed in 0..10 {
        let frames = 20 + 3 * seed as usize;
        let a = features(frames, 63, seed, FeatureKind::Audio);
        let v = features(frames / 4 + 1, 8, seed + 100, FeatureKind::Video);
        let p_av = av_model.predict(&a, Some(&v)).unwrap();
        let p_a = a_model.predict(&a, None).unwrap();
        assert_eq!(p_av.to_bits(), p_a.to_bits(), "seed {seed}");
    }
}

#[test]
fn conv_site_product_with_unit_video_equals_audio_path() {
    let mut m = WwsModel::new(av(FusionSite::Conv, FusionOperator::Product), 2).unwrap();
    let d = m.config().encoder.hidden;
    let w = m.params().get("frontend.video.dense.weight").unwrap().shape().to_vec();
    *m.params_mut().get_mut("frontend.video.dense.weight").unwrap() = Tensor::zeros(&w);
    *m.params_mut().get_mut("frontend.video.dense.bias").unwrap() = Tensor::full(&[d], 1.0);
    let audio_params: Params = m
        .params()
        .iter()
        .filter(|(n, _)| !n.contains("video"))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let a_model = WwsModel::from_params(ModelConfig::desk(ModelKind::ATransformer, 63, 8), audio_params).unwrap();
    for seed in 0..5 {
        let a = features(48, 63, seed, FeatureKind::Audio);
        let a_frames = m.config().audio_frontend.output_frames(48).unwrap();
        let v = features(a_frames, 8, seed + 7, FeatureKind::Video);
        assert_eq!(
            m.predict(&a, Some(&v)).unwrap().to_bits(),
            a_model.predict(&a, None).unwrap().to_bits()
        );
    }
}

#[test]
fn all_fusion_modes_give_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for site in [FusionSite::Conv, FusionSite::Attention] {
        for op in [FusionOperator::WeightedSum, FusionOperator::Product] {
            let m = WwsModel::new(av(site, op), rng.random()).unwrap();
            for _ in 0..10 {
                let frames = rng.random_range(7..80);
                let v_frames = rng.random_range(1..25);
                let a = features(frames, 63, rng.random(), FeatureKind::Audio);
                let v = features(v_frames, 8, rng.random(), FeatureKind::Video);
                let p = m.predict(&a, Some(&v)).unwrap();
                assert!(p > 0.0 && p < 1.0, "{site:?} {op:?}: {p}");
            }
        }
    }
}

#[test]
fn encoder_stacks_preserve_shape() {
    for kind in [ModelKind::ATransformer, ModelKind::AConformer] {
        let m = WwsModel::new(ModelConfig::desk(kind, 63, 8), 1).unwrap();
        for len in [2, 9, 33] {
            let mut g = Graph::new();
            let p = m.bind(&mut g, false);
            let mut rng = ChaCha8Rng::seed_from_u64(len as u64);
            let x = g.constant(common::grad_ops::random(&mut rng, &[len, 64]));
            let y = encoder_stack(&mut g, &p, "encoder.audio", x, &m.config().encoder, 1e-5).unwrap();
            assert_eq!(g.shape(y), &[len, 64]);
        }
    }
}

#[test]
fn without_attention_head_ignores_row_order() {
    let mut cfg = ModelConfig::desk(ModelKind::ATransformer, 63, 8);
    cfg.encoder.n_blocks = 0;
    let m = WwsModel::new(cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let run = |order: &[usize]| {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
        let x = g.constant(Tensor::from_rows(&permuted).unwrap());
        let tok = p.get("token.audio").unwrap();
        let seq = prepend_class_token(&mut g, x, tok).unwrap();
        let enc = encoder_stack(&mut g, &p, "encoder.audio", seq, &m.config().encoder, 1e-5).unwrap();
        let out = classify_head(&mut g, &p, enc).unwrap();
        g.value(out).item()
    };
    let base = run(&[0, 1, 2, 3, 4, 5]);
    assert_eq!(base.to_bits(), run(&[5, 3, 1, 0, 2, 4]).to_bits());
    assert_eq!(base.to_bits(), run(&[1, 0, 2, 3, 5, 4]).to_bits());
}

#[test]
fn frontend_gradients() {
    let cfg = ConvFrontendConfig::audio(11, 2, 4);
    let names = ["f.conv1.weight", "f.conv1.bias", "f.conv2.weight", "f.conv2.bias", "f.dense.weight", "f.dense.bias"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shapes: [&[usize]; 6] = [&[2, 3, 3, 1], &[2], &[2, 3, 3, 2], &[2], &[4, 4], &[4]];
    let inputs: Vec<Tensor> = shapes.iter().map(|s| common::grad_ops::random(&mut rng, s)).collect();
    let f = features(15, 11, 2, FeatureKind::Audio);
    let r = grad_check(
        |g, vars| {
            let p: BoundParams = names.iter().map(|n| n.to_string()).zip(vars.iter().copied()).collect();
            let y = conv_frontend(g, &p, "f", &cfg, &f)?;
            common::grad_ops::reduce(g, y, 1)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{:e}", r.max_rel_error);
}

#[test]
fn head_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seq = common::grad_ops::random(&mut rng, &[3, 5]);
    let inputs = vec![common::grad_ops::random(&mut rng, &[5, 1]), common::grad_ops::random(&mut rng, &[1])];
    let r = grad_check(
        |g, vars| {
            let p: BoundParams = [("head.weight".to_string(), vars[0]), ("head.bias".to_string(), vars[1])]
                .into_iter()
                .collect();
            let s = g.constant(seq.clone());
            let y = classify_head(g, &p, s)?;
            Ok(g.sum(y))
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-5, "{:e}", r.max_rel_error);
}

fn tiny(kind: ModelKind) -> ModelConfig {
    let mut c = ModelConfig::desk(kind, 12, 5);
    c.audio_frontend = ConvFrontendConfig::audio(12, 2, 8);
    if let Some(v) = &mut c.video_frontend {
        *v = ConvFrontendConfig::video(5, 2, 8);
    }
    c.encoder.hidden = 8;
    c.encoder.n_heads = 2;
    c.encoder.ffn = 16;
    c.encoder.n_blocks = 1;
    c.encoder.conv_kernel = 3;
    c
}

#[test]
fn small_stack_full_gradient_check() {
    // Three frames out of the frontend: 15 input frames -> 7 -> 3.
    for kind in [ModelKind::ATransformer, ModelKind::AConformer] {
        let m = WwsModel::new(tiny(kind), 11).unwrap();
        let a = features(15, 12, 1, FeatureKind::Audio);
        let r = model_grad_check(&m, &a, None, 1, usize::MAX, 0);
        assert!(r.max_rel_error <= 1e-3, "{kind:?}: {:e} at {:?}", r.max_rel_error, r.worst);
    }
}

#[test]
fn desk_models_full_gradient_check() {
    let mut cases: Vec<ModelConfig> = vec![
        ModelConfig::desk(ModelKind::ATransformer, 63, 8),
        ModelConfig::desk(ModelKind::AConformer, 63, 8),
    ];
    for site in [FusionSite::Conv, FusionSite::Attention] {
        for op in [FusionOperator::WeightedSum, FusionOperator::Product] {
            cases.push(av(site, op));
        }
    }
    for (i, cfg) in cases.into_iter().enumerate() {
        let m = WwsModel::new(cfg, i as u64).unwrap();
        let a = features(24, 63, i as u64, FeatureKind::Audio);
        let v = features(5, 8, i as u64 + 50, FeatureKind::Video);
        let r = model_grad_check(&m, &a, Some(&v), (i % 2) as u8, 2, i as u64);
        let name = m.params().names().nth(r.worst.0).unwrap().clone();
        assert!(r.max_rel_error <= 1e-3, "case {i}: {:e} at {:?} {name}", r.max_rel_error, r.worst);
    }
}

#[test]
fn a_transformer_two_frame_toy_input() {
    let m = WwsModel::new(ModelConfig::desk(ModelKind::ATransformer, 63, 8), 21).unwrap();
    // 11 frames -> 5 -> 2 after the two stride-2 convolutions.
    let a = features(11, 63, 21, FeatureKind::Audio);
    assert_eq!(m.config().audio_frontend.output_frames(11), Some(2));
    for seed in 0..3 {
        let r = model_grad_check(&m, &a, None, seed as u8 % 2, 6, seed);
        let name = m.params().names().nth(r.worst.0).unwrap().clone();
        assert!(r.max_rel_error <= 1e-3, "{:e} at {name}", r.max_rel_error);
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.avck");
    let m = WwsModel::new(ModelConfig::desk(ModelKind::AConformer, 63, 8), 9).unwrap();
    save_checkpoint(&path, m.params()).unwrap();
    let back = WwsModel::from_params(m.config().clone(), load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(encode_checkpoint(back.params()), encode_checkpoint(m.params()));
    let a = features(30, 63, 0, FeatureKind::Audio);
    assert_eq!(m.predict(&a, None).unwrap().to_bits(), back.predict(&a, None).unwrap().to_bits());
}
