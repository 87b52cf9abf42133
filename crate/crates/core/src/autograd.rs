//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every primitive appends one node holding its output value and enough
//! cached state to run its backward rule. Nodes are appended in execution
//! order, so the tape is topologically sorted by construction and backward
//! is a single reverse sweep.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Reshape(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    SoftmaxRows(Var),
    Concat(Vec<Var>),
    SelectStep(Var, usize),
    StackSteps(Vec<Var>),
    DepthwiseConv1d(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanSteps(Var),
    Sum(Var),
    SparseCrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        floor: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
    check_finite: bool,
}

/// Result of a backward sweep: one gradient per `requires_grad` leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn transpose_last2(t: &Tensor) -> Tensor {
    let r = t.rank();
    let (m, n) = (t.shape()[r - 2], t.shape()[r - 1]);
    let batch = t.len() / (m * n);
    let src = t.data();
    let mut out = vec![0.0; t.len()];
    for b in 0..batch {
        let off = b * m * n;
        for i in 0..m {
            for j in 0..n {
                out[off + j * m + i] = src[off + i * n + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, out).expect("transpose preserves size")
}

/// Zero-padded ("same") depthwise 1-D convolution along axis 1 of `[b, L, c]`.
fn depthwise_forward(x: &Tensor, w: &Tensor) -> Tensor {
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = w.shape()[0];
    let pad = (k - 1) / 2;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for li in 0..l {
            let o = &mut out[(bi * l + li) * c..(bi * l + li + 1) * c];
            for ki in 0..k {
                let src = li + ki;
                if src < pad || src - pad >= l {
                    continue;
                }
                let xrow = &xd[(bi * l + src - pad) * c..(bi * l + src - pad + 1) * c];
                let wrow = &wd[ki * c..(ki + 1) * c];
                for ch in 0..c {
                    o[ch] += wrow[ch] * xrow[ch];
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same padding preserves shape")
}

/// Output length and left padding for TensorFlow-style "same" pooling.
pub(crate) fn same_pool_geometry(len: usize, size: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let pad_total = ((out - 1) * stride + size).saturating_sub(len);
    (out, pad_total / 2)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn precision(&self) -> Precision {
        self.precision
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

    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        self.precision.round_slice(value.data_mut());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, mut value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        self.precision.round_slice(value.data_mut());
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_rank("matmul", ta, 2)?;
        expect_rank("matmul", tb, 2)?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: [{m},{k}] x [{k2},{n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_rank("batch_matmul", ta, 3)?;
        expect_rank("batch_matmul", tb, 3)?;
        let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (bs2, k2, n) = (tb.shape()[0], tb.shape()[1], tb.shape()[2]);
        if bs != bs2 || k != k2 {
            return Err(Error::shape(
                "batch_matmul",
                format!("cannot multiply {:?} by {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(vec![bs, m, n], out)?;
        self.push("batch_matmul", value, Op::BatchMatMul(a, b), &[a, b])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::shape("transpose", format!("rank {} < 2", t.rank())));
        }
        let value = transpose_last2(t);
        self.push("transpose", value, Op::TransposeLast2(x), &[x])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `[n]` bias to every row of a `[..., n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.rank() != 1 || tb.len() != n {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} does not match last axis of {:?}", tb.shape(), tx.shape()),
            ));
        }
        let bd = tb.data();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bd) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * s);
        self.push("scale", value, Op::Scale(x, s), &[x])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let t = self.value(x);
        let value = match kind {
            Activation::Relu => t.map(|v| v.max(0.0)),
            Activation::Sigmoid => t.map(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Tanh => t.map(f64::tanh),
        };
        self.push("activation", value, Op::Act(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("softmax_rows", value, Op::SoftmaxRows(x), &[x])
    }

    /// Concatenate along the last (channel) axis; leading axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        for (i, &v) in xs.iter().enumerate() {
            let s = self.shape(v);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat",
                    format!(
                        "input {i} has shape {s:?}, expected leading axes {lead:?} matching input 0"
                    ),
                ));
            }
        }
        let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).cols()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push("concat", value, Op::Concat(xs.to_vec()), xs)
    }

    /// `x[:, t, :]` of a `[b, L, c]` tensor.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let tx = self.value(x);
        expect_rank("select_step", tx, 3)?;
        let (b, l, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        if t >= l {
            return Err(Error::shape("select_step", format!("step {t} out of range for length {l}")));
        }
        let mut data = Vec::with_capacity(b * c);
        for bi in 0..b {
            data.extend_from_slice(&tx.data()[(bi * l + t) * c..(bi * l + t + 1) * c]);
        }
        let value = Tensor::new(vec![b, c], data)?;
        self.push("select_step", value, Op::SelectStep(x, t), &[x])
    }

    /// Stack `L` tensors of shape `[b, c]` into `[b, L, c]`.
    pub fn stack_steps(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::shape("stack_steps", "no inputs"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 2 {
            return Err(Error::shape("stack_steps", format!("expected [b,c], got {s0:?}")));
        }
        if let Some(i) = xs.iter().position(|&v| self.shape(v) != &s0[..]) {
            return Err(Error::shape(
                "stack_steps",
                format!("input {i} has shape {:?}, expected {s0:?}", self.shape(xs[i])),
            ));
        }
        let (b, c, l) = (s0[0], s0[1], xs.len());
        let mut data = vec![0.0; b * l * c];
        for (t, &v) in xs.iter().enumerate() {
            let src = self.value(v).data();
            for bi in 0..b {
                data[(bi * l + t) * c..(bi * l + t + 1) * c]
                    .copy_from_slice(&src[bi * c..(bi + 1) * c]);
            }
        }
        let value = Tensor::new(vec![b, l, c], data)?;
        self.push("stack_steps", value, Op::StackSteps(xs.to_vec()), xs)
    }

    /// Depthwise 1-D convolution of `[b, L, c]` with kernels `[K, c]`, K odd,
    /// zero "same" padding.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        expect_rank("depthwise_conv1d", tx, 3)?;
        expect_rank("depthwise_conv1d", tw, 2)?;
        if tw.shape()[0] % 2 == 0 {
            return Err(Error::shape("depthwise_conv1d", "kernel size must be odd"));
        }
        if tw.shape()[1] != tx.shape()[2] {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("kernel has {} channels, input has {}", tw.shape()[1], tx.shape()[2]),
            ));
        }
        let value = depthwise_forward(tx, tw);
        self.push("depthwise_conv1d", value, Op::DepthwiseConv1d(x, w), &[x, w])
    }

    /// Normalise each channel (last axis) with the statistics of the batch.
    /// Returns the output and the per-channel batch mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let tx = self.value(x);
        let c = tx.cols();
        self.check_channel_params("batch_norm", c, gamma, beta)?;
        let rows = tx.rows();
        let mut mean = vec![0.0; c];
        for row in tx.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in tx.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalise(x, gamma, beta, &mean, &inv_std);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: true,
        };
        let v = self.push("batch_norm", out, op, &[x, gamma, beta])?;
        Ok((v, mean, var))
    }

    /// Normalise each channel with fixed (running) statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.value(x).cols();
        self.check_channel_params("batch_norm", c, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics do not match channels"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalise(x, gamma, beta, mean, &inv_std);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: false,
        };
        self.push("batch_norm", out, op, &[x, gamma, beta])
    }

    fn check_channel_params(&self, op: &'static str, c: usize, gamma: Var, beta: Var) -> Result<()> {
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::shape(
                    op,
                    format!("parameter shape {:?} does not match {c} channels", self.shape(p)),
                ));
            }
        }
        Ok(())
    }

    fn normalise(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64]) -> (Tensor, Vec<f64>) {
        let tx = self.value(x);
        let c = tx.cols();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(tx.len());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(h * g[ch] + b[ch]);
            }
        }
        (Tensor::new(tx.shape().to_vec(), out).expect("same shape"), xhat)
    }

    /// Max pooling along axis 1 of `[b, L, c]` with TensorFlow "same" padding
    /// (padded slots act as negative infinity).
    pub fn max_pool1d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let tx = self.value(x);
        expect_rank("max_pool1d", tx, 3)?;
        if size == 0 || stride == 0 {
            return Err(Error::shape("max_pool1d", "size and stride must be positive"));
        }
        let (b, l, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (out_len, pad_left) = same_pool_geometry(l, size, stride);
        let xd = tx.data();
        let mut out = Vec::with_capacity(b * out_len * c);
        let mut argmax = Vec::with_capacity(b * out_len * c);
        for bi in 0..b {
            for o in 0..out_len {
                let start = (o * stride) as isize - pad_left as isize;
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for w in 0..size as isize {
                        let pos = start + w;
                        if pos < 0 || pos >= l as isize {
                            continue;
                        }
                        let idx = (bi * l + pos as usize) * c + ch;
                        if best_idx == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let value = Tensor::new(vec![b, out_len, c], out)?;
        self.push("max_pool1d", value, Op::MaxPool1d { x, argmax }, &[x])
    }

    /// Mean over axis 1: `[b, L, c] -> [b, c]`.
    pub fn mean_steps(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        expect_rank("mean_steps", tx, 3)?;
        let (b, l, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for li in 0..l {
                let row = &tx.data()[(bi * l + li) * c..(bi * l + li + 1) * c];
                for (o, v) in out[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= l as f64);
        let value = Tensor::new(vec![b, c], out)?;
        self.push("mean_steps", value, Op::MeanSteps(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    /// Mean negative log-likelihood of `labels` under row-stochastic `probs`
    /// `[b, n]`; probabilities are floored at `floor` before the log.
    pub fn sparse_cross_entropy(&mut self, probs: Var, labels: &[usize], floor: f64) -> Result<Var> {
        let tp = self.value(probs);
        expect_rank("sparse_cross_entropy", tp, 2)?;
        let (b, n) = (tp.shape()[0], tp.shape()[1]);
        if labels.len() != b {
            return Err(Error::shape(
                "sparse_cross_entropy",
                format!("{} labels for a batch of {b}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
            return Err(Error::shape(
                "sparse_cross_entropy",
                format!("label {bad} out of range for {n} classes"),
            ));
        }
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -tp.data()[i * n + y].max(floor).ln())
            .sum::<f64>()
            / b as f64;
        let op = Op::SparseCrossEntropy {
            probs,
            labels: labels.to_vec(),
            floor,
        };
        self.push("sparse_cross_entropy", Tensor::scalar(loss), op, &[probs])
    }

    /// Reverse sweep from a scalar `loss`. Every `requires_grad` leaf recorded
    /// before `loss` gets a gradient; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if matches!(node.op, Op::Leaf) {
                    out.grads.insert(Var(i), Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            self.backprop_node(node, g, &mut grads, &mut out, i);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
        idx: usize,
    ) {
        // Accumulate `delta` into the gradient slot of `v`.
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {
                let t = Tensor::new(y.shape().to_vec(), g).expect("leaf gradient shape");
                out.grads.insert(Var(idx), t);
            }
            Op::Reshape(x) => acc(*x, g),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(&g, tb.data(), &mut da, m, k, n);
                    acc(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(ta.data(), &g, &mut db, m, k, n);
                    acc(*b, db);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        gemm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    acc(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        gemm_tn(
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    acc(*b, db);
                }
            }
            Op::TransposeLast2(x) => {
                let gt = Tensor::new(y.shape().to_vec(), g).expect("grad shape");
                acc(*x, transpose_last2(&gt).into_data());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*b, g.iter().map(|v| -v).collect());
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, g.iter().zip(tb).map(|(g, b)| g * b).collect());
                acc(*b, g.iter().zip(ta).map(|(g, a)| g * a).collect());
            }
            Op::AddBias(x, b) => {
                let n = y.cols();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                acc(*b, db);
                acc(*x, g);
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|v| v * s).collect()),
            Op::Act(x, kind) => {
                let yd = y.data();
                let dx = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(yd)
                        .map(|(g, &y)| if y > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => g.iter().zip(yd).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Activation::Tanh => g.iter().zip(yd).map(|(g, y)| g * (1.0 - y * y)).collect(),
                };
                acc(*x, dx);
            }
            Op::SoftmaxRows(x) => {
                let n = y.cols();
                let mut dx = vec![0.0; g.len()];
                for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Concat(xs) => {
                let total = y.cols();
                let rows = y.rows();
                let mut offset = 0;
                for &v in xs {
                    let w = self.value(v).cols();
                    if self.requires_grad(v) {
                        let mut dv = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dv.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(v, dv);
                    }
                    offset += w;
                }
            }
            Op::SelectStep(x, t) => {
                let s = self.shape(*x);
                let (b, l, c) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; b * l * c];
                for bi in 0..b {
                    dx[(bi * l + t) * c..(bi * l + t + 1) * c].copy_from_slice(&g[bi * c..(bi + 1) * c]);
                }
                acc(*x, dx);
            }
            Op::StackSteps(xs) => {
                let (b, l, c) = (y.shape()[0], y.shape()[1], y.shape()[2]);
                for (t, &v) in xs.iter().enumerate() {
                    if !self.requires_grad(v) {
                        continue;
                    }
                    let mut dv = Vec::with_capacity(b * c);
                    for bi in 0..b {
                        dv.extend_from_slice(&g[(bi * l + t) * c..(bi * l + t + 1) * c]);
                    }
                    acc(v, dv);
                }
            }
            Op::DepthwiseConv1d(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (b, l, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let k = tw.shape()[0];
                let pad = (k - 1) / 2;
                let (xd, wd) = (tx.data(), tw.data());
                let mut dx = vec![0.0; tx.len()];
                let mut dw = vec![0.0; tw.len()];
                for bi in 0..b {
                    for li in 0..l {
                        let grow = &g[(bi * l + li) * c..(bi * l + li + 1) * c];
                        for ki in 0..k {
                            let src = li + ki;
                            if src < pad || src - pad >= l {
                                continue;
                            }
                            let base = (bi * l + src - pad) * c;
                            for ch in 0..c {
                                dx[base + ch] += grow[ch] * wd[ki * c + ch];
                                dw[ki * c + ch] += grow[ch] * xd[base + ch];
                            }
                        }
                    }
                }
                acc(*x, dx);
                acc(*w, dw);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = y.cols();
                let rows = y.rows() as f64;
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        dgamma[ch] += grow[ch] * hrow[ch];
                        dbeta[ch] += grow[ch];
                    }
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; g.len()];
                    if *batch_stats {
                        // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                        for ((drow, grow), hrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                            for ch in 0..c {
                                let dxhat = grow[ch] * gd[ch];
                                drow[ch] = inv_std[ch] / rows
                                    * (rows * dxhat
                                        - gd[ch] * dbeta[ch]
                                        - hrow[ch] * gd[ch] * dgamma[ch]);
                            }
                        }
                    } else {
                        for (drow, grow) in dx.chunks_mut(c).zip(g.chunks(c)) {
                            for ch in 0..c {
                                drow[ch] = grow[ch] * gd[ch] * inv_std[ch];
                            }
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
                acc(*x, dx);
            }
            Op::MeanSteps(x) => {
                let s = self.shape(*x);
                let (b, l, c) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; b * l * c];
                for bi in 0..b {
                    for li in 0..l {
                        for ch in 0..c {
                            dx[(bi * l + li) * c + ch] = g[bi * c + ch] / l as f64;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).len()]),
            Op::SparseCrossEntropy { probs, labels, floor } => {
                let tp = self.value(*probs);
                let n = tp.cols();
                let b = labels.len() as f64;
                let mut dp = vec![0.0; tp.len()];
                for (i, &lbl) in labels.iter().enumerate() {
                    let p = tp.data()[i * n + lbl];
                    if p > *floor {
                        dp[i * n + lbl] = -g[0] / (b * p);
                    }
                }
                acc(*probs, dp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let v = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let out = tape.matmul(i, v).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let out = tape.matmul(a, v).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 1]);
        assert_eq!(tape.value(out).item(), 11.0);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("inner dimensions"), "{err}");
    }

    #[test]
    fn add_checks_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let z = tape.constant(Tensor::zeros(&[2]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
        let s = tape.add(a, z).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0]);

        let x = tape.constant(Tensor::zeros(&[4, 8]));
        let y = tape.constant(Tensor::zeros(&[4, 9]));
        assert!(matches!(tape.add(x, y), Err(Error::Shape { .. })));
    }

    #[test]
    fn activations_pointwise() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(t(&[1], &[0.0]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn softmax_is_stable() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[0.0, 0.0, 1000.0, 1000.0]));
        let s = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn concat_channels() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 1]));
        let b = tape.constant(Tensor::ones(&[2, 1]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2]);
        assert_eq!(tape.value(c).data(), &[0.0, 1.0, 0.0, 1.0]);

        let single = tape.concat(&[b]).unwrap();
        assert_eq!(tape.value(single), tape.value(b));

        let five: Vec<Var> = (0..5).map(|_| tape.constant(Tensor::zeros(&[3, 8]))).collect();
        let c = tape.concat(&five).unwrap();
        assert_eq!(tape.value(c).shape(), &[3, 40]);
    }

    #[test]
    fn concat_names_offending_input() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 1]));
        let b = tape.constant(Tensor::zeros(&[2, 1]));
        let c = tape.constant(Tensor::zeros(&[3, 1]));
        let err = tape.concat(&[a, b, c]).unwrap_err();
        assert!(err.to_string().contains("input 2"), "{err}");
    }

    #[test]
    fn backward_sum_and_square() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let unused = tape.leaf(Tensor::ones(&[3]), true);
        let x = tape.leaf(Tensor::ones(&[2]), true);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn finite_check_flags_overflow() {
        let mut tape = Tape::new().with_finite_check(true);
        let x = tape.constant(t(&[1], &[1e308]));
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite { .. })));

        let mut lax = Tape::new();
        let x = lax.constant(t(&[1], &[1e308]));
        assert!(lax.scale(x, 10.0).is_ok());
    }

    #[test]
    fn max_pool_same_padding() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3, 1], &[1.0, 3.0, 2.0]));
        let p = tape.max_pool1d(x, 2, 1).unwrap();
        assert_eq!(tape.value(p).data(), &[3.0, 3.0, 2.0]);

        let x = tape.constant(t(&[1, 5, 1], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let p = tape.max_pool1d(x, 2, 2).unwrap();
        assert_eq!(tape.value(p).shape(), &[1, 3, 1]);
        assert_eq!(tape.value(p).data(), &[2.0, 4.0, 5.0]);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::full(&[1, 2], 0.5));
        assert!(tape.sparse_cross_entropy(p, &[2], 1e-12).is_err());
    }
}
