//! Building blocks shared by the three architectures. Each takes its
//! parameters from a [`BoundParams`] under a name prefix.

use std::collections::BTreeMap;

use super::config::{ConvFrontendConfig, EncoderConfig, EncoderKind, FusionOperator};
use super::Params;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::tensor::{multi_head_attention, AttentionWeights, Graph, Tensor, Var};

/// Parameters placed on a graph, looked up by name.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Adds every parameter to `g`; names for which `trainable` returns
    /// false become constants.
    pub fn bind(g: &mut Graph, params: &Params, trainable: impl Fn(&str) -> bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

impl FromIterator<(String, Var)> for BoundParams {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

/// Conv → ReLU → conv → ReLU → flatten → dense, giving `[T', hidden]`.
pub fn conv_frontend(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    cfg: &ConvFrontendConfig,
    f: &FeatureMatrix,
) -> Result<Var> {
    if f.dim() != cfg.input_dim {
        return Err(Error::Dimension(format!(
            "{prefix}: expected {}-dim features, got {}",
            cfg.input_dim,
            f.dim()
        )));
    }
    if cfg.output_frames(f.frames()).is_none() {
        return Err(Error::Input(format!(
            "{prefix}: {} frames is too short, the frontend needs at least {}",
            f.frames(),
            cfg.min_frames()
        )));
    }
    let x = g.constant(Tensor::new(vec![f.frames(), f.dim(), 1], f.data().to_vec())?);
    let mut h = x;
    for (i, layer) in [cfg.conv1, cfg.conv2].iter().enumerate() {
        let k = p.get(&format!("{prefix}.conv{}.weight", i + 1))?;
        let b = p.get(&format!("{prefix}.conv{}.bias", i + 1))?;
        let c = g.conv2d(h, k, layer.stride)?;
        let c = g.add_bias(c, b)?;
        h = g.relu(c);
    }
    let t = g.shape(h)[0];
    let flat = g.reshape(h, vec![t, cfg.flat_width()])?;
    let w = p.get(&format!("{prefix}.dense.weight"))?;
    let b = p.get(&format!("{prefix}.dense.bias"))?;
    g.linear(flat, w, b)
}

/// Places the `[D]` token `c` in front of the `[T', D]` sequence.
pub fn prepend_class_token(g: &mut Graph, x: Var, c: Var) -> Result<Var> {
    let d = g.value(x).last_dim();
    if g.shape(x).len() != 2 || g.shape(c) != [d] {
        return Err(Error::Dimension(format!(
            "class token {:?} does not match sequence {:?}",
            g.shape(c),
            g.shape(x)
        )));
    }
    let row = g.reshape(c, vec![1, d])?;
    g.concat_rows(&[row, x])
}

/// Sinusoidal table `[len, d]`: even columns `sin(p / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn positional_embedding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for p in 0..len {
        for j in 0..d {
            let i = (j / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
            data[p * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("positive sizes")
}

pub fn add_positional_embedding(g: &mut Graph, x: Var, max_len: usize) -> Result<Var> {
    let (len, d) = match g.shape(x) {
        [a, b] => (*a, *b),
        s => return Err(Error::Dimension(format!("positional embedding needs [T, D], got {s:?}"))),
    };
    if len > max_len {
        return Err(Error::Input(format!(
            "sequence of {len} positions exceeds the maximum of {max_len}"
        )));
    }
    let pe = g.constant(positional_embedding(len, d));
    g.add(x, pe)
}

fn layer_norm(g: &mut Graph, p: &BoundParams, name: &str, x: Var, eps: f64) -> Result<Var> {
    let gain = p.get(&format!("{name}.gain"))?;
    let bias = p.get(&format!("{name}.bias"))?;
    g.layer_norm(x, gain, bias, eps)
}

fn linear(g: &mut Graph, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    g.linear(x, w, b)
}

fn self_attention(g: &mut Graph, p: &BoundParams, name: &str, x: Var, heads: usize) -> Result<Var> {
    let w = AttentionWeights {
        wq: p.get(&format!("{name}.wq"))?,
        bq: p.get(&format!("{name}.bq"))?,
        wk: p.get(&format!("{name}.wk"))?,
        bk: p.get(&format!("{name}.bk"))?,
        wv: p.get(&format!("{name}.wv"))?,
        bv: p.get(&format!("{name}.bv"))?,
        wo: p.get(&format!("{name}.wo"))?,
        bo: p.get(&format!("{name}.bo"))?,
    };
    Ok(multi_head_attention(g, x, x, x, &w, heads)?.output)
}

/// `w2 · act(w1 · x)`.
fn feed_forward(g: &mut Graph, p: &BoundParams, name: &str, x: Var, swish: bool) -> Result<Var> {
    let h = linear(g, p, &format!("{name}.fc1"), x)?;
    let h = if swish { g.swish(h) } else { g.relu(h) };
    linear(g, p, &format!("{name}.fc2"), h)
}

/// Pre-norm block: `x + MHSA(LN(x))`, then `x + FFN(LN(x))`.
fn transformer_block(g: &mut Graph, p: &BoundParams, name: &str, x: Var, cfg: &EncoderConfig, eps: f64) -> Result<Var> {
    let h = layer_norm(g, p, &format!("{name}.ln1"), x, eps)?;
    let a = self_attention(g, p, &format!("{name}.attn"), h, cfg.n_heads)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, p, &format!("{name}.ln2"), x, eps)?;
    let f = feed_forward(g, p, &format!("{name}.ffn"), h, false)?;
    g.add(x, f)
}

fn conformer_block(g: &mut Graph, p: &BoundParams, name: &str, x: Var, cfg: &EncoderConfig, eps: f64) -> Result<Var> {
    let half_ffn = |g: &mut Graph, x: Var, which: &str| -> Result<Var> {
        let h = layer_norm(g, p, &format!("{name}.{which}.ln"), x, eps)?;
        let f = feed_forward(g, p, &format!("{name}.{which}"), h, true)?;
        let f = g.scale(f, 0.5);
        g.add(x, f)
    };
    let x = half_ffn(g, x, "ffn1")?;

    let h = layer_norm(g, p, &format!("{name}.mhsa.ln"), x, eps)?;
    let a = self_attention(g, p, &format!("{name}.attn"), h, cfg.n_heads)?;
    let x = g.add(x, a)?;

    let h = layer_norm(g, p, &format!("{name}.conv.ln"), x, eps)?;
    let h = linear(g, p, &format!("{name}.conv.pw1"), h)?;
    let h = g.glu(h)?;
    let k = p.get(&format!("{name}.conv.dw.weight"))?;
    let b = p.get(&format!("{name}.conv.dw.bias"))?;
    let h = g.depthwise_conv1d(h, k)?;
    let h = g.add_bias(h, b)?;
    let h = g.swish(h);
    let h = linear(g, p, &format!("{name}.conv.pw2"), h)?;
    let x = g.add(x, h)?;

    let x = half_ffn(g, x, "ffn2")?;
    layer_norm(g, p, &format!("{name}.ln_out"), x, eps)
}

fn check_width(g: &Graph, x: Var, cfg: &EncoderConfig) -> Result<()> {
    cfg.validate()?;
    match g.shape(x) {
        [_, d] if *d == cfg.hidden => Ok(()),
        s => Err(Error::Dimension(format!(
            "encoder expects [T, {}], got {s:?}",
            cfg.hidden
        ))),
    }
}

pub fn transformer_encoder_stack(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &EncoderConfig,
    eps: f64,
) -> Result<Var> {
    check_width(g, x, cfg)?;
    (0..cfg.n_blocks).try_fold(x, |h, i| transformer_block(g, p, &format!("{prefix}.block{i}"), h, cfg, eps))
}

pub fn conformer_encoder_stack(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &EncoderConfig,
    eps: f64,
) -> Result<Var> {
    check_width(g, x, cfg)?;
    (0..cfg.n_blocks).try_fold(x, |h, i| conformer_block(g, p, &format!("{prefix}.block{i}"), h, cfg, eps))
}

pub fn encoder_stack(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &EncoderConfig,
    eps: f64,
) -> Result<Var> {
    match cfg.kind {
        EncoderKind::Transformer => transformer_encoder_stack(g, p, prefix, x, cfg, eps),
        EncoderKind::Conformer => conformer_encoder_stack(g, p, prefix, x, cfg, eps),
    }
}

/// `sigmoid(row0 · w + b)` as a `[1]` tensor; other rows are ignored.
pub fn classify_head(g: &mut Graph, p: &BoundParams, seq: Var) -> Result<Var> {
    let row0 = g.gather_rows(seq, &[0])?;
    let logit = linear(g, p, "head", row0)?;
    let prob = g.sigmoid(logit);
    g.reshape(prob, vec![1])
}

/// Weighted sum `w_a·y_a + w_v·y_v` (weights are `[1]` vars) or the
/// elementwise product.
pub fn fuse(
    g: &mut Graph,
    y_a: Var,
    y_v: Var,
    operator: FusionOperator,
    weights: Option<(Var, Var)>,
) -> Result<Var> {
    if g.shape(y_a) != g.shape(y_v) {
        return Err(Error::Dimension(format!(
            "cannot fuse {:?} with {:?}",
            g.shape(y_a),
            g.shape(y_v)
        )));
    }
    match operator {
        FusionOperator::Product => g.mul(y_a, y_v),
        FusionOperator::WeightedSum => {
            let (w_a, w_v) = weights.ok_or_else(|| Error::Config("weighted-sum fusion needs weights".into()))?;
            let a = g.scale_by(y_a, w_a)?;
            let v = g.scale_by(y_v, w_v)?;
            g.add(a, v)
        }
    }
}

/// Nearest-neighbour resampling of the rows of `x` to `len` rows.
pub fn resample_rows(g: &mut Graph, x: Var, len: usize) -> Result<Var> {
    let n = g.shape(x)[0];
    if n == len {
        return Ok(x);
    }
    let index = nearest_index(n, len);
    g.gather_rows(x, &index)
}

pub(crate) fn nearest_index(from: usize, to: usize) -> Vec<usize> {
    (0..to)
        .map(|i| {
            let pos = (i as f64 + 0.5) * from as f64 / to as f64 - 0.5;
            (pos.round().max(0.0) as usize).min(from - 1)
        })
        .collect()
}
