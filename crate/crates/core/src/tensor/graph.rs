use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Scalar function applied elementwise, with its derivative.
pub trait ElementwiseFn: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// Per-example loss on a probability and a target, averaged by the graph.
pub trait PointwiseLoss: Send + Sync {
    fn loss(&self, p: f64, target: f64) -> f64;
    fn dloss(&self, p: f64, target: f64) -> f64;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddBias(Var, Var),
    Sigmoid(Var),
    Swish(Var),
    Relu(Var),
    Glu(Var),
    Map(Var, Arc<dyn ElementwiseFn>),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        stride: (usize, usize),
    },
    DepthwiseConv1d {
        x: Var,
        kernel: Var,
    },
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Loss {
        p: Var,
        targets: Vec<f64>,
        loss: Arc<dyn PointwiseLoss>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations, replayed in reverse by [`Graph::backward`].
///
/// Nodes are appended in execution order, so every node's inputs precede it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn dims2(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("{op}: expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    fn zip_same(&self, a: Var, b: Var, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Multiplication by a fixed real.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|v| v * c).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// Multiplication by a one-element tensor (a trainable scalar).
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Dimension(format!(
                "scale_by: factor must have one element, got shape {:?}",
                self.shape(s)
            )));
        }
        let c = self.value(s).item();
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|v| v * c).collect(),
        };
        let rg = self.rg(&[x, s]);
        Ok(self.push(t, Op::ScaleBy(x, s), rg))
    }

    /// Adds a vector along the last axis (broadcast over all leading axes).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(b) != [d] {
            return Err(shape_err("add_bias", self.shape(x), self.shape(b)));
        }
        let bd = self.value(b).data();
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % d])
            .collect();
        let t = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[x, b]);
        Ok(self.push(t, Op::AddBias(x, b), rg))
    }

    /// `x · w + b` for a matrix `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&v| f(v)).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Var {
        self.unary(x, Op::Swish(x), |v| v * sigmoid(v))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn map(&mut self, x: Var, f: Arc<dyn ElementwiseFn>) -> Var {
        let g = f.clone();
        self.unary(x, Op::Map(x, f), move |v| g.value(v))
    }

    /// Gated linear unit: splits the last axis into `[a, b]` and returns `a ⊙ sigmoid(b)`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if !d.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "glu: last axis must be even, got shape {shape:?}"
            )));
        }
        let h = d / 2;
        let xd = self.value(x).data();
        let rows = xd.len() / d;
        let mut out = Vec::with_capacity(rows * h);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            for j in 0..h {
                out.push(row[j] * sigmoid(row[h + j]));
            }
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = h;
        let t = Tensor::new(oshape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Glu(x), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = (xd[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[idx(j)] /= z;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    /// Normalises each vector along the last axis to zero mean and unit
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layer_norm: eps must be > 0, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", &shape, self.shape(gain)));
        }
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Valid-padding 2-D cross-correlation.
    ///
    /// `x` is `[T, F, Cin]`, `kernel` is `[Cout, KT, KF, Cin]`; the result is
    /// `[(T-KT)/ST + 1, (F-KF)/SF + 1, Cout]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: (usize, usize)) -> Result<Var> {
        let (t, f, cin) = match self.shape(x) {
            [a, b, c] => (*a, *b, *c),
            s => return Err(Error::Dimension(format!("conv2d: input must be [T, F, C], got {s:?}"))),
        };
        let (cout, kt, kf, kc) = match self.shape(kernel) {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => {
                return Err(Error::Dimension(format!(
                    "conv2d: kernel must be [Cout, KT, KF, Cin], got {s:?}"
                )))
            }
        };
        if kc != cin || kt > t || kf > f {
            return Err(shape_err("conv2d", self.shape(x), self.shape(kernel)));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("conv2d: stride must be positive".into()));
        }
        let to = (t - kt) / stride.0 + 1;
        let fo = (f - kf) / stride.1 + 1;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let mut out = vec![0.0; to * fo * cout];
        let span = kf * cin;
        for ot in 0..to {
            for of in 0..fo {
                let o = &mut out[(ot * fo + of) * cout..(ot * fo + of + 1) * cout];
                for dt in 0..kt {
                    let it = ot * stride.0 + dt;
                    let xs = &xd[(it * f + of * stride.1) * cin..][..span];
                    for (co, ov) in o.iter_mut().enumerate() {
                        let ks = &kd[((co * kt + dt) * kf) * cin..][..span];
                        *ov += xs.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        let tensor = Tensor::new(vec![to, fo, cout], out)?;
        let rg = self.rg(&[x, kernel]);
        Ok(self.push(tensor, Op::Conv2d { x, kernel, stride }, rg))
    }

    /// Depthwise convolution along time with zero "same" padding.
    ///
    /// `x` is `[T, C]`, `kernel` is `[K, C]` with odd `K`; output is `[T, C]`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (t, c) = self.dims2(x, "depthwise_conv1d")?;
        let (k, kc) = self.dims2(kernel, "depthwise_conv1d")?;
        if kc != c || k % 2 == 0 {
            return Err(shape_err("depthwise_conv1d", self.shape(x), self.shape(kernel)));
        }
        let pad = k / 2;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let mut out = vec![0.0; t * c];
        for ti in 0..t {
            for j in 0..k {
                let src = ti + j;
                if src < pad || src - pad >= t {
                    continue;
                }
                let xs = &xd[(src - pad) * c..][..c];
                let ks = &kd[j * c..][..c];
                for ((o, a), b) in out[ti * c..][..c].iter_mut().zip(xs).zip(ks) {
                    *o += a * b;
                }
            }
        }
        let tensor = Tensor::new(vec![t, c], out)?;
        let rg = self.rg(&[x, kernel]);
        Ok(self.push(tensor, Op::DepthwiseConv1d { x, kernel }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::Dimension(format!(
                "slice_cols: range {start}..{end} invalid for {c} columns"
            )));
        }
        let xd = self.value(x).data();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xd[i * c + start..i * c + end]);
        }
        let t = Tensor::new(vec![r, w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let mut dims = Vec::with_capacity(xs.len());
        for &x in xs {
            dims.push(self.dims2(x, "concat_cols")?);
        }
        let rows = dims.first().map(|d| d.0).ok_or_else(|| Error::Dimension("concat_cols: no inputs".into()))?;
        if dims.iter().any(|d| d.0 != rows) {
            return Err(Error::Dimension(format!("concat_cols: row counts differ: {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&x, &(_, c)) in xs.iter().zip(&dims) {
                out.extend_from_slice(&self.value(x).data()[i * c..(i + 1) * c]);
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        let rg = self.rg(xs);
        Ok(self.push(t, Op::ConcatCols(xs.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let mut dims = Vec::with_capacity(xs.len());
        for &x in xs {
            dims.push(self.dims2(x, "concat_rows")?);
        }
        let cols = dims.first().map(|d| d.1).ok_or_else(|| Error::Dimension("concat_rows: no inputs".into()))?;
        if dims.iter().any(|d| d.1 != cols) {
            return Err(Error::Dimension(format!("concat_rows: column counts differ: {dims:?}")));
        }
        let rows: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &x in xs {
            out.extend_from_slice(self.value(x).data());
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        let rg = self.rg(xs);
        Ok(self.push(t, Op::ConcatRows(xs.to_vec()), rg))
    }

    /// Rows of `x` picked by `index` (repetition allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x, "gather_rows")?;
        if index.is_empty() || index.iter().any(|&i| i >= r) {
            return Err(Error::Dimension(format!(
                "gather_rows: indices must be non-empty and < {r}"
            )));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&xd[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(vec![index.len(), c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of a pointwise loss over all entries of `p`.
    pub fn loss(&mut self, p: Var, targets: &[f64], loss: Arc<dyn PointwiseLoss>) -> Result<Var> {
        let pd = self.value(p).data();
        if pd.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "loss: {} predictions but {} targets",
                pd.len(),
                targets.len()
            )));
        }
        let n = pd.len() as f64;
        let v = pd.iter().zip(targets).map(|(&p, &y)| loss.loss(p, y)).sum::<f64>() / n;
        let rg = self.rg(&[p]);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Loss {
                p,
                targets: targets.to_vec(),
                loss,
            },
            rg,
        ))
    }

    /// Back-propagates from a one-element `loss`, replacing any gradients
    /// from a previous call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        let gyr = &gy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let br = &bd[p * n..(p + 1) * n];
                            ga[r * k + p] += gyr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for r in 0..m {
                        let gyr = &gy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (g, &d) in gb[p * n..(p + 1) * n].iter_mut().zip(gyr) {
                                *g += av * d;
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                acc(*x, &mut |gx| {
                    for a in 0..r {
                        for b in 0..c {
                            gx[a * c + b] += gy[b * r + a];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * bd[j];
                    }
                });
                acc(*b, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * ad[j];
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += c * d));
            }
            Op::ScaleBy(x, s) => {
                let c = val(*s)[0];
                let xd = val(*x);
                acc(*x, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += c * d));
                acc(*s, &mut |g| g[0] += xd.iter().zip(gy).map(|(a, b)| a * b).sum::<f64>());
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                acc(*b, &mut |g| {
                    let d = g.len();
                    for (j, v) in gy.iter().enumerate() {
                        g[j % d] += v;
                    }
                });
            }
            Op::Sigmoid(x) => {
                acc(*x, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Swish(x) => {
                let xd = val(*x);
                acc(*x, &mut |g| {
                    for j in 0..g.len() {
                        let s = sigmoid(xd[j]);
                        g[j] += gy[j] * (s + xd[j] * s * (1.0 - s));
                    }
                });
            }
            Op::Relu(x) => {
                let xd = val(*x);
                acc(*x, &mut |g| {
                    for j in 0..g.len() {
                        if xd[j] > 0.0 {
                            g[j] += gy[j];
                        }
                    }
                });
            }
            Op::Map(x, f) => {
                let xd = val(*x);
                acc(*x, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * f.derivative(xd[j]);
                    }
                });
            }
            Op::Glu(x) => {
                let xd = val(*x);
                let d = nodes[x.0].value.last_dim();
                let h = d / 2;
                acc(*x, &mut |g| {
                    for r in 0..xd.len() / d {
                        for j in 0..h {
                            let a = xd[r * d + j];
                            let s = sigmoid(xd[r * d + h + j]);
                            let d_out = gy[r * h + j];
                            g[r * d + j] += d_out * s;
                            g[r * d + h + j] += d_out * a * s * (1.0 - s);
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| gy[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                g[idx(j)] += y[idx(j)] * (gy[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gd = val(*gain);
                acc(*gain, &mut |g| {
                    for (j, v) in gy.iter().enumerate() {
                        g[j % d] += v * xhat[j];
                    }
                });
                acc(*bias, &mut |g| {
                    for (j, v) in gy.iter().enumerate() {
                        g[j % d] += v;
                    }
                });
                acc(*x, &mut |g| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let base = r * d;
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dh = gy[base + j] * gd[j];
                            m1 += dh;
                            m2 += dh * xhat[base + j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dh = gy[base + j] * gd[j];
                            g[base + j] += is * (dh - m1 - xhat[base + j] * m2);
                        }
                    }
                });
            }
            Op::Conv2d { x, kernel, stride } => {
                let (f, cin) = (nodes[x.0].value.shape()[1], nodes[x.0].value.shape()[2]);
                let ks = nodes[kernel.0].value.shape();
                let (cout, kt, kf) = (ks[0], ks[1], ks[2]);
                let (to, fo) = (node.value.shape()[0], node.value.shape()[1]);
                let (xd, kd) = (val(*x), val(*kernel));
                let span = kf * cin;
                acc(*x, &mut |gx| {
                    for ot in 0..to {
                        for of in 0..fo {
                            let go = &gy[(ot * fo + of) * cout..][..cout];
                            for dt in 0..kt {
                                let it = ot * stride.0 + dt;
                                let gxs = &mut gx[(it * f + of * stride.1) * cin..][..span];
                                for (co, &gv) in go.iter().enumerate() {
                                    let kk = &kd[((co * kt + dt) * kf) * cin..][..span];
                                    for (a, b) in gxs.iter_mut().zip(kk) {
                                        *a += gv * b;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*kernel, &mut |gk| {
                    for ot in 0..to {
                        for of in 0..fo {
                            let go = &gy[(ot * fo + of) * cout..][..cout];
                            for dt in 0..kt {
                                let it = ot * stride.0 + dt;
                                let xs = &xd[(it * f + of * stride.1) * cin..][..span];
                                for (co, &gv) in go.iter().enumerate() {
                                    let gks = &mut gk[((co * kt + dt) * kf) * cin..][..span];
                                    for (a, b) in gks.iter_mut().zip(xs) {
                                        *a += gv * b;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::DepthwiseConv1d { x, kernel } => {
                let (t, c) = (node.value.shape()[0], node.value.shape()[1]);
                let k = nodes[kernel.0].value.shape()[0];
                let pad = k / 2;
                let (xd, kd) = (val(*x), val(*kernel));
                acc(*x, &mut |gx| {
                    for ti in 0..t {
                        for j in 0..k {
                            let src = ti + j;
                            if src < pad || src - pad >= t {
                                continue;
                            }
                            for ch in 0..c {
                                gx[(src - pad) * c + ch] += gy[ti * c + ch] * kd[j * c + ch];
                            }
                        }
                    }
                });
                acc(*kernel, &mut |gk| {
                    for ti in 0..t {
                        for j in 0..k {
                            let src = ti + j;
                            if src < pad || src - pad >= t {
                                continue;
                            }
                            for ch in 0..c {
                                gk[j * c + ch] += gy[ti * c + ch] * xd[(src - pad) * c + ch];
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
            }
            Op::SliceCols { x, start } => {
                let c = nodes[x.0].value.shape()[1];
                let (r, w) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*x, &mut |g| {
                    for i in 0..r {
                        for j in 0..w {
                            g[i * c + start + j] += gy[i * w + j];
                        }
                    }
                });
            }
            Op::ConcatCols(xs) => {
                let (rows, total) = (node.value.shape()[0], node.value.shape()[1]);
                let mut off = 0;
                for &x in xs {
                    let c = nodes[x.0].value.shape()[1];
                    acc(x, &mut |g| {
                        for i in 0..rows {
                            for j in 0..c {
                                g[i * c + j] += gy[i * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = nodes[x.0].value.len();
                    acc(x, &mut |g| {
                        g.iter_mut().zip(&gy[off..off + n]).for_each(|(g, d)| *g += d)
                    });
                    off += n;
                }
            }
            Op::GatherRows { x, index } => {
                let c = node.value.shape()[1];
                acc(*x, &mut |g| {
                    for (row, &src) in index.iter().enumerate() {
                        for j in 0..c {
                            g[src * c + j] += gy[row * c + j];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |g| g.iter_mut().for_each(|g| *g += gy[0]));
            }
            Op::Loss { p, targets, loss } => {
                let pd = val(*p);
                let n = pd.len() as f64;
                acc(*p, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[0] * loss.dloss(pd[j], targets[j]) / n;
                    }
                });
            }
        }
    }
}

/// `(outer, n, inner)` sizes around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
