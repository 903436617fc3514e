//! Translation between key-value configs and the core model/training
//! configuration types.

use std::fmt::Write as _;

use avwws::augment::WpeConfig;
use avwws::features::{FbankConfig, SpecAugmentConfig};
use avwws::models::{ConvFrontendConfig, FusionMode, FusionOperator, FusionSite, ModelConfig, ModelKind};
use avwws::training::{LossKind, PostWarmup, TrainConfig};
use avwws::{Error, Result};

use crate::chain::ChainSettings;
use crate::config::KvConfig;
use crate::synth::SyntheticSpec;

pub fn synthetic_spec(cfg: &KvConfig, seed: u64) -> Result<SyntheticSpec> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_positive: cfg.get_or("n_positive", d.n_positive)?,
        n_negative: cfg.get_or("n_negative", d.n_negative)?,
        sample_rate: cfg.get_or("sample_rate", d.sample_rate)?,
        min_duration: cfg.get_or("min_duration", d.min_duration)?,
        max_duration: cfg.get_or("max_duration", d.max_duration)?,
        seed,
        video_dim: cfg.get_or("video_dim", d.video_dim)?,
        dev_fraction: cfg.get_or("dev_fraction", d.dev_fraction)?,
        noise_level: cfg.get_or("noise_level", d.noise_level)?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn fbank_config(cfg: &KvConfig) -> Result<FbankConfig> {
    let d = FbankConfig::default();
    Ok(FbankConfig {
        n_mels: cfg.get_or("n_mels", d.n_mels)?,
        frame_len: cfg.get_or("frame_len", d.frame_len)?,
        frame_shift: cfg.get_or("frame_shift", d.frame_shift)?,
        floor_energy: cfg.get_or("floor_energy", d.floor_energy)?,
    })
}

pub fn chain_settings(cfg: &KvConfig) -> Result<ChainSettings> {
    let d = ChainSettings::default();
    let s = ChainSettings {
        mics: cfg.get_or("mics", d.mics)?,
        mic_spacing: cfg.get_or("mic_spacing", d.mic_spacing)?,
        rir_max_order: cfg.get_or("rir_max_order", d.rir_max_order)?,
        wpe: WpeConfig {
            taps: cfg.get_or("wpe_taps", d.wpe.taps)?,
            delay: cfg.get_or("wpe_delay", d.wpe.delay)?,
            iterations: cfg.get_or("wpe_iterations", d.wpe.iterations)?,
        },
        stft_size: cfg.get_or("stft_size", d.stft_size)?,
        stft_hop: cfg.get_or("stft_hop", d.stft_hop)?,
    };
    if s.mics == 0 || !(s.mic_spacing > 0.0) {
        return Err(Error::Config("mics must be >= 1 and mic_spacing positive".into()));
    }
    Ok(s)
}

fn site_name(s: FusionSite) -> &'static str {
    match s {
        FusionSite::Conv => "conv",
        FusionSite::Attention => "attention",
    }
}

fn operator_name(o: FusionOperator) -> &'static str {
    match o {
        FusionOperator::WeightedSum => "weighted_sum",
        FusionOperator::Product => "product",
    }
}

/// Builds a model configuration from `model`, `scale` and the
/// architecture override keys. Feature dims come from the data.
pub fn model_config(cfg: &KvConfig, audio_dim: usize, video_dim: usize) -> Result<ModelConfig> {
    let kind = ModelKind::parse(cfg.raw("model").unwrap_or("a-transformer"))?;
    let mut c = match cfg.raw("scale").unwrap_or("desk") {
        "desk" => ModelConfig::desk(kind, audio_dim, video_dim),
        "full" => ModelConfig::full_scale(kind, audio_dim, video_dim),
        s => return Err(Error::Config(format!("unknown scale {s:?}; expected desk or full"))),
    };
    let hidden = cfg.get_or("hidden", c.encoder.hidden)?;
    c.encoder.hidden = hidden;
    c.encoder.n_heads = cfg.get_or("heads", c.encoder.n_heads)?;
    c.encoder.n_blocks = cfg.get_or("blocks", c.encoder.n_blocks)?;
    c.encoder.ffn = cfg.get_or("ffn", c.encoder.ffn)?;
    c.encoder.conv_kernel = cfg.get_or("conv_kernel", c.encoder.conv_kernel)?;
    c.max_len = cfg.get_or("max_len", c.max_len)?;
    c.ln_eps = cfg.get_or("ln_eps", c.ln_eps)?;
    let audio_channels = cfg.get_or("audio_channels", c.audio_frontend.conv1.channels)?;
    c.audio_frontend = ConvFrontendConfig::audio(audio_dim, audio_channels, hidden);
    if let Some(v) = &c.video_frontend {
        let video_channels = cfg.get_or("video_channels", v.conv1.channels)?;
        c.video_frontend = Some(ConvFrontendConfig::video(video_dim, video_channels, hidden));
        let default = c.fusion.clone().expect("av config has fusion");
        let site = match cfg.raw("fusion_site").unwrap_or(site_name(default.site)) {
            "conv" => FusionSite::Conv,
            "attention" => FusionSite::Attention,
            s => return Err(Error::Config(format!("unknown fusion_site {s:?}; expected conv or attention"))),
        };
        let operator = match cfg.raw("fusion_operator").unwrap_or(operator_name(default.operator)) {
            "weighted_sum" => FusionOperator::WeightedSum,
            "product" => FusionOperator::Product,
            s => {
                return Err(Error::Config(format!(
                    "unknown fusion_operator {s:?}; expected weighted_sum or product"
                )))
            }
        };
        c.fusion = Some(FusionMode {
            site,
            operator,
            w_a: cfg.get_or("w_a", default.w_a)?,
            w_v: cfg.get_or("w_v", default.w_v)?,
            trainable_weights: cfg.bool_or("fusion_trainable", default.trainable_weights)?,
        });
    }
    c.validate()?;
    Ok(c)
}

/// Complete, explicit form of a model configuration; read back with
/// [`read_model_config`].
pub fn format_model_config(c: &ModelConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").unwrap();
    kv("model", &c.kind.name());
    kv("audio_dim", &c.audio_frontend.input_dim);
    kv("hidden", &c.encoder.hidden);
    kv("heads", &c.encoder.n_heads);
    kv("blocks", &c.encoder.n_blocks);
    kv("ffn", &c.encoder.ffn);
    kv("conv_kernel", &c.encoder.conv_kernel);
    kv("max_len", &c.max_len);
    kv("ln_eps", &format!("{:?}", c.ln_eps));
    kv("audio_channels", &c.audio_frontend.conv1.channels);
    if let (Some(v), Some(f)) = (&c.video_frontend, &c.fusion) {
        kv("video_dim", &v.input_dim);
        kv("video_channels", &v.conv1.channels);
        kv("fusion_site", &site_name(f.site));
        kv("fusion_operator", &operator_name(f.operator));
        kv("w_a", &format!("{:?}", f.w_a));
        kv("w_v", &format!("{:?}", f.w_v));
        kv("fusion_trainable", &f.trainable_weights);
    }
    s
}

pub fn read_model_config(text: &str) -> Result<ModelConfig> {
    let cfg = KvConfig::parse(text)?;
    let audio_dim = cfg
        .get("audio_dim")?
        .ok_or_else(|| Error::Config("model config lacks audio_dim".into()))?;
    let video_dim = cfg.get_or("video_dim", 0)?;
    let c = model_config(&cfg, audio_dim, video_dim)?;
    cfg.finish()?;
    Ok(c)
}

fn stage_config(cfg: &KvConfig, stage: u32, seed: u64) -> Result<TrainConfig> {
    let loss = if stage == 1 { LossKind::Ce } else { LossKind::Focal };
    let base = match cfg.raw("scale").unwrap_or("desk") {
        "full" => TrainConfig::full_scale(loss),
        _ => TrainConfig::desk(loss),
    };
    let key = |k: &str| format!("stage{stage}_{k}");
    let post_warmup = match cfg.raw("post_warmup").unwrap_or("constant") {
        "constant" => PostWarmup::Constant,
        "linear_decay" => PostWarmup::LinearDecay,
        s => return Err(Error::Config(format!("unknown post_warmup {s:?}; expected constant or linear_decay"))),
    };
    let spec_augment = if cfg.bool_or("spec_augment", false)? {
        let d = SpecAugmentConfig::default();
        Some(SpecAugmentConfig {
            n_time_masks: cfg.get_or("spec_time_masks", d.n_time_masks)?,
            max_time_width: cfg.get_or("spec_time_width", d.max_time_width)?,
            n_freq_masks: cfg.get_or("spec_freq_masks", d.n_freq_masks)?,
            max_freq_width: cfg.get_or("spec_freq_width", d.max_freq_width)?,
        })
    } else {
        None
    };
    let c = TrainConfig {
        loss,
        focal_gamma: cfg.get_or("focal_gamma", base.focal_gamma)?,
        focal_alpha: cfg.get_or("focal_alpha", base.focal_alpha)?,
        lr_peak: cfg.get_or(&key("lr"), base.lr_peak)?,
        warmup_steps: cfg.get_or(&key("warmup"), base.warmup_steps)?,
        post_warmup,
        batch_size: cfg.get_or("batch_size", base.batch_size)?,
        max_steps: cfg.get_or(&key("steps"), base.max_steps)?,
        seed,
        spec_augment,
    };
    c.validate()?;
    Ok(c)
}

/// Stage 1 (cross-entropy) and stage 2 (focal) settings. Both stages share
/// the run seed; batch order differs because the stage enters the seed.
pub fn train_configs(cfg: &KvConfig, seed: u64) -> Result<(TrainConfig, TrainConfig)> {
    Ok((stage_config(cfg, 1, seed)?, stage_config(cfg, 2, seed)?))
}
