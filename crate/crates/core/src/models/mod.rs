//! A-Transformer, A-Conformer and AV-Transformer wake-word classifiers.
//!
//! Parameter names:
//! `frontend.{audio,video}.{conv1,conv2,dense}.{weight,bias}`,
//! `token.{audio,video}`, `encoder.{audio,video}.block{i}.*`,
//! `head.{weight,bias}` and, for weighted-sum fusion, `fusion.w_a`,
//! `fusion.w_v`. The audio-only models use exactly the audio subset of the
//! AV names.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{
    ConvFrontendConfig, ConvLayerSpec, EncoderConfig, EncoderKind, FusionMode, FusionOperator, FusionSite,
    ModelConfig, ModelKind, DEFAULT_VIDEO_DIM,
};
pub use layers::{
    add_positional_embedding, classify_head, conformer_encoder_stack, conv_frontend, encoder_stack, fuse,
    positional_embedding, prepend_class_token, resample_rows, transformer_encoder_stack, BoundParams,
};
pub use params::Params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::tensor::{Graph, Tensor, Var};

/// Standard deviation of the class-token initialisation (variance 0.0004).
pub const CLASS_TOKEN_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Zeros,
    Ones,
    Const(f64),
    Normal(f64),
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)).
    Xavier(usize, usize),
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{name}.weight"), vec![fan_in, fan_out], Init::Xavier(fan_in, fan_out));
        self.push(format!("{name}.bias"), vec![fan_out], Init::Zeros);
    }

    fn layer_norm(&mut self, name: &str, d: usize) {
        self.push(format!("{name}.gain"), vec![d], Init::Ones);
        self.push(format!("{name}.bias"), vec![d], Init::Zeros);
    }

    fn attention(&mut self, name: &str, d: usize) {
        for m in ["q", "k", "v", "o"] {
            self.push(format!("{name}.w{m}"), vec![d, d], Init::Xavier(d, d));
            self.push(format!("{name}.b{m}"), vec![d], Init::Zeros);
        }
    }

    fn frontend(&mut self, name: &str, cfg: &ConvFrontendConfig) {
        let mut cin = 1;
        for (i, l) in [cfg.conv1, cfg.conv2].iter().enumerate() {
            let (kt, kf) = l.kernel;
            self.push(
                format!("{name}.conv{}.weight", i + 1),
                vec![l.channels, kt, kf, cin],
                Init::Xavier(kt * kf * cin, kt * kf * l.channels),
            );
            self.push(format!("{name}.conv{}.bias", i + 1), vec![l.channels], Init::Zeros);
            cin = l.channels;
        }
        self.linear(&format!("{name}.dense"), cfg.flat_width(), cfg.hidden);
    }

    fn encoder(&mut self, name: &str, cfg: &EncoderConfig) {
        let (d, f) = (cfg.hidden, cfg.ffn);
        for i in 0..cfg.n_blocks {
            let b = format!("{name}.block{i}");
            match cfg.kind {
                EncoderKind::Transformer => {
                    self.layer_norm(&format!("{b}.ln1"), d);
                    self.attention(&format!("{b}.attn"), d);
                    self.layer_norm(&format!("{b}.ln2"), d);
                    self.linear(&format!("{b}.ffn.fc1"), d, f);
                    self.linear(&format!("{b}.ffn.fc2"), f, d);
                }
                EncoderKind::Conformer => {
                    for which in ["ffn1", "ffn2"] {
                        self.layer_norm(&format!("{b}.{which}.ln"), d);
                        self.linear(&format!("{b}.{which}.fc1"), d, f);
                        self.linear(&format!("{b}.{which}.fc2"), f, d);
                    }
                    self.layer_norm(&format!("{b}.mhsa.ln"), d);
                    self.attention(&format!("{b}.attn"), d);
                    self.layer_norm(&format!("{b}.conv.ln"), d);
                    self.linear(&format!("{b}.conv.pw1"), d, 2 * d);
                    let k = cfg.conv_kernel;
                    self.push(format!("{b}.conv.dw.weight"), vec![k, d], Init::Xavier(k, k));
                    self.push(format!("{b}.conv.dw.bias"), vec![d], Init::Zeros);
                    self.linear(&format!("{b}.conv.pw2"), d, d);
                    self.layer_norm(&format!("{b}.ln_out"), d);
                }
            }
        }
    }

    fn for_model(cfg: &ModelConfig) -> Self {
        let mut s = Specs(Vec::new());
        let d = cfg.encoder.hidden;
        s.frontend("frontend.audio", &cfg.audio_frontend);
        s.push("token.audio".into(), vec![d], Init::Normal(CLASS_TOKEN_STD));
        s.encoder("encoder.audio", &cfg.encoder);
        if let (Some(vf), Some(fusion)) = (&cfg.video_frontend, &cfg.fusion) {
            s.frontend("frontend.video", vf);
            if fusion.site == FusionSite::Attention {
                s.push("token.video".into(), vec![d], Init::Normal(CLASS_TOKEN_STD));
                s.encoder("encoder.video", &cfg.encoder);
            }
            if fusion.operator == FusionOperator::WeightedSum {
                s.push("fusion.w_a".into(), vec![1], Init::Const(fusion.w_a));
                s.push("fusion.w_v".into(), vec![1], Init::Const(fusion.w_v));
            }
        }
        s.linear("head", d, 1);
        s
    }
}

fn sample(init: Init, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Const(c) => vec![c; n],
        Init::Normal(std) => {
            let normal = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| normal.sample(rng)).collect()
        }
        Init::Xavier(fan_in, fan_out) => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..=a)).collect()
        }
    }
}

/// A configured model and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WwsModel {
    config: ModelConfig,
    params: Params,
}

impl WwsModel {
    /// Freshly initialised parameters, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Specs::for_model(&config)
            .0
            .into_iter()
            .map(|s| {
                let n = s.shape.iter().product();
                let t = Tensor::new(s.shape, sample(s.init, n, &mut rng)).expect("spec shapes are positive");
                (s.name, t)
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Wraps existing parameters; names and shapes must match the config
    /// exactly.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let specs = Specs::for_model(&config).0;
        for s in &specs {
            let t = params.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        if params.len() != specs.len() {
            let extra = params
                .names()
                .find(|n| !specs.iter().any(|s| &s.name == *n))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Contract(format!("unexpected parameter {extra}")));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Whether training updates the named parameter.
    pub fn is_trainable(&self, name: &str) -> bool {
        match &self.config.fusion {
            Some(f) if name.starts_with("fusion.") => f.trainable_weights,
            _ => true,
        }
    }

    /// Puts the parameters on `g`, as leaves requiring gradients when
    /// `with_grad` (frozen parameters always become constants).
    pub fn bind(&self, g: &mut Graph, with_grad: bool) -> BoundParams {
        BoundParams::bind(g, &self.params, |n| with_grad && self.is_trainable(n))
    }

    fn encode(&self, g: &mut Graph, p: &BoundParams, branch: &str, seq: Var) -> Result<Var> {
        let token = p.get(&format!("token.{branch}"))?;
        let x = prepend_class_token(g, seq, token)?;
        let x = add_positional_embedding(g, x, self.config.max_len)?;
        encoder_stack(g, p, &format!("encoder.{branch}"), x, &self.config.encoder, self.config.ln_eps)
    }

    fn fusion_weights(p: &BoundParams, op: FusionOperator) -> Result<Option<(Var, Var)>> {
        Ok(match op {
            FusionOperator::WeightedSum => Some((p.get("fusion.w_a")?, p.get("fusion.w_v")?)),
            FusionOperator::Product => None,
        })
    }

    /// Wake probability as a `[1]` node.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        audio: &FeatureMatrix,
        video: Option<&FeatureMatrix>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let y_a = conv_frontend(g, p, "frontend.audio", &cfg.audio_frontend, audio)?;
        let (Some(vcfg), Some(fusion)) = (&cfg.video_frontend, &cfg.fusion) else {
            let enc = self.encode(g, p, "audio", y_a)?;
            return classify_head(g, p, enc);
        };
        let video = video.ok_or_else(|| Error::Config("av-transformer needs video features".into()))?;
        let y_v = conv_frontend(g, p, "frontend.video", vcfg, video)?;
        let weights = Self::fusion_weights(p, fusion.operator)?;
        match fusion.site {
            FusionSite::Conv => {
                let (ta, tv) = (g.shape(y_a)[0], g.shape(y_v)[0]);
                let len = ta.max(tv);
                let y_a = resample_rows(g, y_a, len)?;
                let y_v = resample_rows(g, y_v, len)?;
                let fused = fuse(g, y_a, y_v, fusion.operator, weights)?;
                let enc = self.encode(g, p, "audio", fused)?;
                classify_head(g, p, enc)
            }
            FusionSite::Attention => {
                let enc_a = self.encode(g, p, "audio", y_a)?;
                let enc_v = self.encode(g, p, "video", y_v)?;
                let c_a = g.gather_rows(enc_a, &[0])?;
                let c_v = g.gather_rows(enc_v, &[0])?;
                let fused = fuse(g, c_a, c_v, fusion.operator, weights)?;
                classify_head(g, p, fused)
            }
        }
    }

    /// Wake probability for one utterance.
    pub fn predict(&self, audio: &FeatureMatrix, video: Option<&FeatureMatrix>) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = self.forward(&mut g, &p, audio, video)?;
        Ok(g.value(out).item())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn features(frames: usize, dim: usize, seed: u64, kind: FeatureKind) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        FeatureMatrix::new(data, frames, dim, if kind == FeatureKind::Audio { 0.01 } else { 0.04 }, kind).unwrap()
    }

    fn small(kind: ModelKind) -> ModelConfig {
        let mut c = ModelConfig::desk(kind, 20, 6);
        c.audio_frontend = ConvFrontendConfig::audio(20, 2, 8);
        if let Some(v) = &mut c.video_frontend {
            *v = ConvFrontendConfig::video(6, 2, 8);
        }
        c.encoder.hidden = 8;
        c.encoder.n_heads = 2;
        c.encoder.ffn = 16;
        c.encoder.n_blocks = 1;
        c.encoder.conv_kernel = 3;
        c
    }

    #[test]
    fn same_seed_same_model() {
        for kind in [ModelKind::ATransformer, ModelKind::AConformer, ModelKind::AvTransformer] {
            let cfg = ModelConfig::desk(kind, 63, 8);
            let a = WwsModel::new(cfg.clone(), 5).unwrap();
            let b = WwsModel::new(cfg.clone(), 5).unwrap();
            assert_eq!(encode_checkpoint(a.params()), encode_checkpoint(b.params()));
            let c = WwsModel::new(cfg, 6).unwrap();
            assert_ne!(a.params(), c.params());
            let f = features(40, 63, 1, FeatureKind::Audio);
            let v = features(10, 8, 2, FeatureKind::Video);
            assert_eq!(
                a.predict(&f, Some(&v)).unwrap().to_bits(),
                b.predict(&f, Some(&v)).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn class_token_initial_spread() {
        let mut cfg = ModelConfig::desk(ModelKind::ATransformer, 63, 8);
        cfg.encoder.hidden = 512;
        cfg.encoder.n_heads = 8;
        cfg.encoder.n_blocks = 0;
        cfg.audio_frontend.hidden = 512;
        let m = WwsModel::new(cfg, 3).unwrap();
        let tok = m.params().get("token.audio").unwrap().data();
        let var = tok.iter().map(|v| v * v).sum::<f64>() / tok.len() as f64;
        assert!((var - 0.0004).abs() < 0.0001, "variance {var}");
    }

    #[test]
    fn zero_head_gives_one_half() {
        for kind in [ModelKind::ATransformer, ModelKind::AConformer] {
            let mut m = WwsModel::new(small(kind), 9).unwrap();
            *m.params_mut().get_mut("head.weight").unwrap() = Tensor::zeros(&[8, 1]);
            for seed in 0..5 {
                let f = features(10 + seed as usize * 7, 20, seed, FeatureKind::Audio);
                assert_eq!(m.predict(&f, None).unwrap(), 0.5);
            }
        }
    }

    #[test]
    fn probabilities_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [ModelKind::ATransformer, ModelKind::AConformer] {
            let m = WwsModel::new(small(kind), 1).unwrap();
            for _ in 0..20 {
                let frames = rng.random_range(7..60);
                let f = features(frames, 20, rng.random(), FeatureKind::Audio);
                let p = m.predict(&f, None).unwrap();
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn av_requires_video() {
        let m = WwsModel::new(small(ModelKind::AvTransformer), 1).unwrap();
        let f = features(20, 20, 0, FeatureKind::Audio);
        assert!(matches!(m.predict(&f, None), Err(Error::Config(_))));
    }

    #[test]
    fn from_params_checks_layout() {
        let m = WwsModel::new(small(ModelKind::ATransformer), 1).unwrap();
        let cfg = m.config().clone();
        assert!(WwsModel::from_params(cfg.clone(), m.params().clone()).is_ok());
        let mut p = m.params().clone();
        p.insert("extra", Tensor::scalar(1.0));
        assert!(WwsModel::from_params(cfg.clone(), p).is_err());
        let mut p = m.params().clone();
        p.insert("head.bias", Tensor::zeros(&[2]));
        assert!(WwsModel::from_params(cfg.clone(), p).is_err());
        let mut p = m.params().clone();
        p.remove("token.audio");
        assert!(WwsModel::from_params(cfg, p).is_err());
    }

    #[test]
    fn fixed_fusion_weights_are_constants() {
        let mut cfg = small(ModelKind::AvTransformer);
        cfg.fusion = Some(FusionMode::fixed_weights(FusionSite::Attention, 0.7, 0.3));
        let m = WwsModel::new(cfg, 1).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, true);
        assert!(!g.requires_grad(p.get("fusion.w_a").unwrap()));
        assert!(g.requires_grad(p.get("head.weight").unwrap()));
    }
}
