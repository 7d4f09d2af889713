//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order together with the
//! values its backward rule needs. [`Graph::backward`] walks the tape in exact
//! reverse order, accumulating gradients additively into each input.
//!
//! The operator set is deliberately small: exactly what the segmentation
//! network needs plus `add` and `sum` for building test graphs.

mod gradcheck;
mod kernels;

pub use gradcheck::{gradcheck, GradcheckReport, GRADCHECK_STEP};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch-norm variance guard.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch norm uses batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    /// Mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let keep = T::of(BN_MOMENTUM);
        let take = T::one() - keep;
        for (r, &m) in self.mean.iter_mut().zip(batch_mean) {
            *r = keep * *r + take * m;
        }
        for (r, &v) in self.var.iter_mut().zip(batch_var) {
            *r = keep * *r + take * v;
        }
    }
}

enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Tile {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
///
/// Only leaves that require gradients keep their buffers.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Gradients are kept only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Zero-padded "same" convolution along the point axis.
    ///
    /// `input` is `[N, C_in]` or `[B, N, C_in]`, `kernel` is `[k, C_in, C_out]`
    /// with odd `k`, `bias` is `[C_out]`. Each sample in a batch is convolved
    /// independently.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        let b = self.value(bias);
        if !(2..=3).contains(&x.rank()) {
            return Err(shape_err(format!(
                "conv1d input {:?} must be rank 2 or 3",
                x.shape()
            )));
        }
        let [k, c_in, c_out] = *w.shape() else {
            return Err(shape_err(format!(
                "conv1d kernel {:?} must be [k, C_in, C_out]",
                w.shape()
            )));
        };
        if k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        if x.channels() != c_in {
            return Err(shape_err(format!(
                "conv1d input has {} channels, kernel expects {c_in}",
                x.channels()
            )));
        }
        if b.shape() != [c_out] {
            return Err(shape_err(format!(
                "conv1d bias {:?}, expected [{c_out}]",
                b.shape()
            )));
        }
        let (bs, n, _) = x.dims3();
        let mut out = vec![T::zero(); bs * n * c_out];
        kernels::conv1d_forward(
            x.data(),
            w.data(),
            b.data(),
            &mut out,
            bs,
            n,
            k,
            c_in,
            c_out,
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank >= 2") = c_out;
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
            },
            rg,
        ))
    }

    /// Per-channel batch normalization over all batch and point rows.
    ///
    /// In [`Mode::Train`] the batch statistics are used and kept on the node
    /// (see [`Graph::batch_stats`]); `stats` is only read in [`Mode::Eval`].
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchNormStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let x = self.value(input);
        if !(2..=3).contains(&x.rank()) {
            return Err(shape_err(format!(
                "batch_norm input {:?} must be rank 2 or 3",
                x.shape()
            )));
        }
        let c = x.channels();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(shape_err(format!(
                    "batch_norm {name} {:?}, expected [{c}]",
                    self.value(v).shape()
                )));
            }
        }
        if stats.channels() != c {
            return Err(shape_err(format!(
                "batch_norm running stats have {} channels, expected {c}",
                stats.channels()
            )));
        }
        let rows = x.len() / c;
        if rows == 0 {
            return Err(shape_err("batch_norm needs at least one row"));
        }
        let (mean, var) = match mode {
            Mode::Train => kernels::channel_moments(x.data(), rows, c),
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let eps = T::of(BN_EPSILON);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut normalized = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(c) {
            for j in 0..c {
                let xh = (row[j] - mean[j]) * inv_std[j];
                normalized.push(xh);
                out.push(g[j] * xh + bt[j]);
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let train = mode == Mode::Train;
        let (batch_mean, batch_var) = if train {
            (mean, var)
        } else {
            (Vec::new(), Vec::new())
        };
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                train,
                batch_mean,
                batch_var,
            },
            rg,
        ))
    }

    /// Batch mean and biased variance seen by a train-mode batch-norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                train: true,
                batch_mean,
                batch_var,
                ..
            } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, input: Var) -> Var {
        let value = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Relu { input }, rg)
    }

    /// Channel-wise maximum over the point axis: `[N, C] -> [C]`,
    /// `[B, N, C] -> [B, C]`. Backward routes to the first maximal row.
    pub fn max_pool_seq(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if !(2..=3).contains(&x.rank()) {
            return Err(shape_err(format!(
                "max_pool_seq input {:?} must be rank 2 or 3",
                x.shape()
            )));
        }
        let (bs, n, c) = x.dims3();
        if n == 0 {
            return Err(shape_err("max_pool_seq needs at least one point"));
        }
        let mut out = vec![T::zero(); bs * c];
        let mut argmax = vec![0usize; bs * c];
        for b in 0..bs {
            let best = &mut out[b * c..(b + 1) * c];
            let arg = &mut argmax[b * c..(b + 1) * c];
            best.copy_from_slice(x.row(b, 0));
            for p in 1..n {
                for ((m, a), &v) in best.iter_mut().zip(arg.iter_mut()).zip(x.row(b, p)) {
                    if v > *m {
                        *m = v;
                        *a = p;
                    }
                }
            }
        }
        let shape = &x.shape()[..x.rank() - 2];
        let shape: Vec<usize> = shape.iter().copied().chain([c]).collect();
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// Repeats a feature vector along a new point axis:
    /// `[C] -> [n, C]`, `[B, C] -> [B, n, C]`.
    pub fn tile_rows(&mut self, input: Var, n: usize) -> Result<Var> {
        let x = self.value(input);
        if n == 0 {
            return Err(shape_err("tile_rows needs n >= 1"));
        }
        let (bs, c, shape) = match *x.shape() {
            [c] => (1, c, vec![n, c]),
            [b, c] => (b, c, vec![b, n, c]),
            _ => {
                return Err(shape_err(format!(
                    "tile_rows input {:?} must be rank 1 or 2",
                    x.shape()
                )))
            }
        };
        let mut out = Vec::with_capacity(bs * n * c);
        for row in x.data().chunks_exact(c.max(1)).take(bs) {
            for _ in 0..n {
                out.extend_from_slice(row);
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Tile { input }, rg))
    }

    /// Concatenates along the channel axis in argument order.
    pub fn concat_cols(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat_cols needs inputs"))?;
        let lead =
            self.value(*first).shape()[..self.value(*first).rank().saturating_sub(1)].to_vec();
        if lead.is_empty() {
            return Err(shape_err("concat_cols inputs must have rank >= 2"));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err(format!(
                    "concat_cols shapes {:?} and {s:?} disagree",
                    self.value(*first).shape()
                )));
            }
            total += s[lead.len()];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in inputs {
                let t = self.value(*v);
                let c = t.channels();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise softmax followed by the summed negative log-likelihood of the
    /// true class over rows whose mask is set. Returns a scalar; the softmax
    /// output is kept and available through [`Graph::probabilities`].
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let x = self.value(logits);
        if x.rank() < 1 {
            return Err(shape_err(
                "softmax_cross_entropy logits must have a class axis",
            ));
        }
        let c = x.channels();
        let rows = x.len() / c.max(1);
        if labels.len() != rows || mask.len() != rows {
            return Err(shape_err(format!(
                "{rows} logit rows but {} labels and {} mask entries",
                labels.len(),
                mask.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let mut probs = Vec::with_capacity(x.len());
        let mut loss = T::zero();
        for (r, row) in x.data().chunks_exact(c).enumerate() {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for &v in row {
                let e = (v - m).exp();
                probs.push(e);
                z += e;
            }
            let start = probs.len() - c;
            for p in &mut probs[start..] {
                *p /= z;
            }
            if mask[r] {
                loss += m + z.ln() - row[labels[r]];
            }
        }
        let probs = Tensor::new(x.shape(), probs)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Softmax output retained by a cross-entropy node.
    pub fn probabilities(&self, v: Var) -> Option<&Tensor<T>> {
        match &self.nodes[v.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let value = Tensor::new(x.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// Activation pattern of every non-smooth operation on the tape: one entry
    /// per ReLU input sign and per max-pool argmax.
    ///
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => sig.extend(
                    self.value(*input)
                        .data()
                        .iter()
                        .map(|&v| usize::from(v > T::zero())),
                ),
                Op::MaxPool { argmax, .. } => sig.extend_from_slice(argmax),
                _ => {}
            }
        }
        sig
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        slot.as_mut().map(Tensor::data_mut)
    }

    /// Removes a gradient buffer for in-place accumulation, creating it if needed.
    fn take_slot(&self, grads: &mut [Option<Tensor<T>>], v: Var) -> Option<Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape())),
        )
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernel,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let (bs, n, c_in) = x.dims3();
                let (k, c_out) = (w.shape()[0], w.shape()[2]);
                if let Some(gb) = self.grad_slot(grads, *bias) {
                    for row in gd.chunks_exact(c_out) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
                let mut gx = self.take_slot(grads, *input);
                let mut gw = self.take_slot(grads, *kernel);
                kernels::conv1d_backward(
                    x.data(),
                    w.data(),
                    gd,
                    gx.as_mut().map(Tensor::data_mut),
                    gw.as_mut().map(Tensor::data_mut),
                    bs,
                    n,
                    k,
                    c_in,
                    c_out,
                );
                grads[input.0] = gx;
                if kernel != input {
                    grads[kernel.0] = gw;
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                train,
                ..
            } => {
                let c = inv_std.len();
                let rows = normalized.len() / c;
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xh = vec![T::zero(); c];
                for (dy, xh) in gd.chunks_exact(c).zip(normalized.chunks_exact(c)) {
                    for j in 0..c {
                        sum_dy[j] += dy[j];
                        sum_dy_xh[j] += dy[j] * xh[j];
                    }
                }
                if let Some(gg) = self.grad_slot(grads, *gamma) {
                    for (a, &v) in gg.iter_mut().zip(&sum_dy_xh) {
                        *a += v;
                    }
                }
                if let Some(gbeta) = self.grad_slot(grads, *beta) {
                    for (a, &v) in gbeta.iter_mut().zip(&sum_dy) {
                        *a += v;
                    }
                }
                let gamma_v = self.value(*gamma).data().to_vec();
                if let Some(gx) = self.grad_slot(grads, *input) {
                    let r = T::of(rows as f64);
                    for ((gxr, dy), xh) in gx
                        .chunks_exact_mut(c)
                        .zip(gd.chunks_exact(c))
                        .zip(normalized.chunks_exact(c))
                    {
                        for j in 0..c {
                            let scale = gamma_v[j] * inv_std[j];
                            if *train {
                                gxr[j] +=
                                    scale / r * (r * dy[j] - sum_dy[j] - xh[j] * sum_dy_xh[j]);
                            } else {
                                gxr[j] += scale * dy[j];
                            }
                        }
                    }
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                if let Some(gx) = self.grad_slot(grads, *input) {
                    for ((a, &v), &d) in gx.iter_mut().zip(x).zip(gd) {
                        if v > T::zero() {
                            *a += d;
                        }
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                let (_, n, c) = self.value(*input).dims3();
                if let Some(gx) = self.grad_slot(grads, *input) {
                    for (bc, (&p, &d)) in argmax.iter().zip(gd).enumerate() {
                        let (b, j) = (bc / c, bc % c);
                        gx[(b * n + p) * c + j] += d;
                    }
                }
            }
            Op::Tile { input } => {
                let c = self.value(*input).channels();
                let bs = self.value(*input).len() / c.max(1);
                let n = g.len() / (bs * c).max(1);
                if let Some(gx) = self.grad_slot(grads, *input) {
                    for b in 0..bs {
                        let acc = &mut gx[b * c..(b + 1) * c];
                        for row in gd[b * n * c..(b + 1) * n * c].chunks_exact(c) {
                            for (a, &v) in acc.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs } => {
                let total = g.channels();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for v in inputs {
                    let c = self.value(*v).channels();
                    if let Some(gx) = self.grad_slot(grads, *v) {
                        for r in 0..rows {
                            let src = &gd[r * total + offset..r * total + offset + c];
                            for (a, &s) in gx[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *a += s;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                mask,
                probs,
            } => {
                let up = gd[0];
                let c = probs.channels();
                if let Some(gx) = self.grad_slot(grads, *logits) {
                    for (r, (gr, pr)) in gx
                        .chunks_exact_mut(c)
                        .zip(probs.data().chunks_exact(c))
                        .enumerate()
                    {
                        if !mask[r] {
                            continue;
                        }
                        for j in 0..c {
                            let onehot = if j == labels[r] { T::one() } else { T::zero() };
                            gr[j] += up * (pr[j] - onehot);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(gx) = self.grad_slot(grads, *v) {
                        for (s, &d) in gx.iter_mut().zip(gd) {
                            *s += d;
                        }
                    }
                }
            }
            Op::Sum { input } => {
                let up = gd[0];
                if let Some(gx) = self.grad_slot(grads, *input) {
                    for s in gx.iter_mut() {
                        *s += up;
                    }
                }
            }
        }
    }
}

/// Row-wise softmax over the last axis, without recording anything.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.channels();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(c.max(1)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - m).exp();
            out.push(e);
            z += e;
        }
        for p in &mut out[start..] {
            *p /= z;
        }
    }
    Tensor::new(logits.shape(), out).expect("same shape")
}
