use super::{Graph, Var};
use crate::error::{Error, Result};

/// Projection parameters of one multi-head attention layer.
///
/// All projection matrices are `[D, D]` and biases `[D]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Output of [`multi_head_attention`] together with the per-head
/// `[Tq, Tk]` attention weight matrices.
pub struct Attention {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention over `heads` heads of width `D / heads`;
/// head outputs are concatenated and passed through the output projection.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<Attention> {
    let d = g.value(q).last_dim();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model width {d} is not divisible by {heads} attention heads"
        )));
    }
    if g.value(k).last_dim() != d || g.value(v).last_dim() != d || g.shape(k) != g.shape(v) {
        return Err(Error::Dimension(format!(
            "attention inputs disagree: q {:?}, k {:?}, v {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    let dh = d / heads;
    let qp = g.linear(q, w.wq, w.bq)?;
    let kp = g.linear(k, w.wk, w.bk)?;
    let vp = g.linear(v, w.wv, w.bv)?;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (qp, kp, vp)
        } else {
            (g.slice_cols(qp, lo, hi)?, g.slice_cols(kp, lo, hi)?, g.slice_cols(vp, lo, hi)?)
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax(scores, 1)?;
        outs.push(g.matmul(a, vh)?);
        weights.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let output = g.linear(cat, w.wo, w.bo)?;
    Ok(Attention { output, weights })
}
