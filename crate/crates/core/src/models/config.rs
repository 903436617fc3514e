use crate::error::{Error, Result};

/// One valid-padding convolution layer of a frontend.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    /// (time, feature)
    pub kernel: (usize, usize),
    /// (time, feature)
    pub stride: (usize, usize),
    pub channels: usize,
}

impl ConvLayerSpec {
    fn out_len(&self, n: usize, axis: usize) -> Option<usize> {
        let (k, s) = if axis == 0 {
            (self.kernel.0, self.stride.0)
        } else {
            (self.kernel.1, self.stride.1)
        };
        (n >= k).then(|| (n - k) / s + 1)
    }
}

/// Two conv layers (ReLU after each) followed by a dense projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFrontendConfig {
    pub input_dim: usize,
    pub conv1: ConvLayerSpec,
    pub conv2: ConvLayerSpec,
    /// Dense output width; must equal the encoder hidden size.
    pub hidden: usize,
}

impl ConvFrontendConfig {
    /// Audio frontend: two 3×3 stride-2 convs, 10 ms frames in, 40 ms out.
    pub fn audio(input_dim: usize, channels: usize, hidden: usize) -> Self {
        let layer = ConvLayerSpec {
            kernel: (3, 3),
            stride: (2, 2),
            channels,
        };
        Self {
            input_dim,
            conv1: layer,
            conv2: layer,
            hidden,
        }
    }

    /// Video frontend: convs along the feature axis only, frame rate kept.
    pub fn video(input_dim: usize, channels: usize, hidden: usize) -> Self {
        let layer = ConvLayerSpec {
            kernel: (1, 3),
            stride: (1, 1),
            channels,
        };
        Self {
            input_dim,
            conv1: layer,
            conv2: layer,
            hidden,
        }
    }

    /// Output length for `frames` input frames, `None` if too short.
    pub fn output_frames(&self, frames: usize) -> Option<usize> {
        self.conv1.out_len(frames, 0).and_then(|t| self.conv2.out_len(t, 0))
    }

    pub fn min_frames(&self) -> usize {
        (self.conv2.kernel.0 - 1) * self.conv1.stride.0 + self.conv1.kernel.0
    }

    pub fn output_features(&self) -> Option<usize> {
        self.conv1.out_len(self.input_dim, 1).and_then(|f| self.conv2.out_len(f, 1))
    }

    /// Width of the flattened conv output fed to the dense layer.
    pub fn flat_width(&self) -> usize {
        self.output_features().unwrap_or(0) * self.conv2.channels
    }

    pub fn validate(&self) -> Result<()> {
        for l in [&self.conv1, &self.conv2] {
            if l.kernel.0 == 0 || l.kernel.1 == 0 || l.stride.0 == 0 || l.stride.1 == 0 || l.channels == 0 {
                return Err(Error::Config(format!("conv layer has a zero size: {l:?}")));
            }
        }
        if self.hidden == 0 {
            return Err(Error::Config("frontend dense width must be positive".into()));
        }
        if self.output_features().is_none() {
            return Err(Error::Config(format!(
                "feature dim {} is too small for the frontend kernels",
                self.input_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Transformer,
    Conformer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub kind: EncoderKind,
    /// Depthwise kernel of the conformer conv module (odd).
    pub conv_kernel: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.ffn == 0 || self.n_heads == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.n_heads
            )));
        }
        if self.kind == EncoderKind::Conformer && self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conformer conv kernel must be odd, got {}",
                self.conv_kernel
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionSite {
    /// Fuse the two frontend outputs, then one shared encoder.
    Conv,
    /// Fuse the class vectors of two separate encoders.
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionOperator {
    WeightedSum,
    /// Elementwise product; weights unused.
    Product,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionMode {
    pub site: FusionSite,
    pub operator: FusionOperator,
    pub w_a: f64,
    pub w_v: f64,
    /// Whether `w_a`, `w_v` are updated during training.
    pub trainable_weights: bool,
}

impl FusionMode {
    pub fn new(site: FusionSite, operator: FusionOperator) -> Self {
        Self {
            site,
            operator,
            w_a: 0.7,
            w_v: 0.3,
            trainable_weights: true,
        }
    }

    /// Weighted sum with the given weights held fixed.
    pub fn fixed_weights(site: FusionSite, w_a: f64, w_v: f64) -> Self {
        Self {
            site,
            operator: FusionOperator::WeightedSum,
            w_a,
            w_v,
            trainable_weights: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    ATransformer,
    AConformer,
    AvTransformer,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ATransformer => "a-transformer",
            ModelKind::AConformer => "a-conformer",
            ModelKind::AvTransformer => "av-transformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "a-transformer" => Ok(ModelKind::ATransformer),
            "a-conformer" => Ok(ModelKind::AConformer),
            "av-transformer" => Ok(ModelKind::AvTransformer),
            _ => Err(Error::Config(format!(
                "unknown model kind {s:?}; expected a-transformer, a-conformer or av-transformer"
            ))),
        }
    }

    fn encoder_kind(self) -> EncoderKind {
        match self {
            ModelKind::AConformer => EncoderKind::Conformer,
            _ => EncoderKind::Transformer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub audio_frontend: ConvFrontendConfig,
    /// Required for the AV model.
    pub video_frontend: Option<ConvFrontendConfig>,
    pub encoder: EncoderConfig,
    /// Required for the AV model.
    pub fusion: Option<FusionMode>,
    /// Longest sequence (class token included) the positional embedding covers.
    pub max_len: usize,
    pub ln_eps: f64,
}

pub const DEFAULT_VIDEO_DIM: usize = 8;

impl ModelConfig {
    /// Small configuration used by tests and the synthetic pipeline:
    /// hidden 64, 4 heads, 2 blocks, FFN 256.
    pub fn desk(kind: ModelKind, audio_dim: usize, video_dim: usize) -> Self {
        Self::build(kind, audio_dim, video_dim, 64, 4, 2, 256, 8, 4)
    }

    /// 4 blocks, 8 heads, hidden 512, FFN 2048.
    pub fn full_scale(kind: ModelKind, audio_dim: usize, video_dim: usize) -> Self {
        Self::build(kind, audio_dim, video_dim, 512, 8, 4, 2048, 32, 32)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: ModelKind,
        audio_dim: usize,
        video_dim: usize,
        hidden: usize,
        heads: usize,
        blocks: usize,
        ffn: usize,
        audio_channels: usize,
        video_channels: usize,
    ) -> Self {
        let av = kind == ModelKind::AvTransformer;
        Self {
            kind,
            audio_frontend: ConvFrontendConfig::audio(audio_dim, audio_channels, hidden),
            video_frontend: av.then(|| ConvFrontendConfig::video(video_dim, video_channels, hidden)),
            encoder: EncoderConfig {
                n_blocks: blocks,
                n_heads: heads,
                hidden,
                ffn,
                kind: kind.encoder_kind(),
                conv_kernel: 15,
            },
            fusion: av.then(|| FusionMode::new(FusionSite::Attention, FusionOperator::WeightedSum)),
            max_len: 1000,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.audio_frontend.validate()?;
        if self.encoder.kind != self.kind.encoder_kind() {
            return Err(Error::Config(format!(
                "{} requires a {:?} encoder",
                self.kind.name(),
                self.kind.encoder_kind()
            )));
        }
        let mut fronts = vec![&self.audio_frontend];
        match (self.kind, &self.video_frontend, &self.fusion) {
            (ModelKind::AvTransformer, Some(v), Some(_)) => {
                v.validate()?;
                fronts.push(v);
            }
            (ModelKind::AvTransformer, _, _) => {
                return Err(Error::Config("av-transformer needs a video frontend and a fusion mode".into()))
            }
            (_, None, None) => {}
            _ => {
                return Err(Error::Config(format!(
                    "{} takes no video frontend or fusion mode",
                    self.kind.name()
                )))
            }
        }
        for f in fronts {
            if f.hidden != self.encoder.hidden {
                return Err(Error::Config(format!(
                    "frontend width {} differs from encoder hidden size {}",
                    f.hidden, self.encoder.hidden
                )));
            }
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must allow the class token and one frame".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn is_audio_visual(&self) -> bool {
        self.kind == ModelKind::AvTransformer
    }
}
