//! The multi-column point network.
//!
//! Each column runs three same-length convolutions (BN + ReLU after each)
//! over the ordered points, max-pools the deepest map into a global feature,
//! tiles it back over the points and concatenates it with the first map.
//! Column outputs are concatenated and passed through five pointwise
//! convolutions, the last one producing class logits.

mod checkpoint;
mod config;

pub use checkpoint::{from_bytes, load, save, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    ColumnConfig, ColumnShapes, MCPNetConfig, ShapeChain, WidthFactor, COLUMN_CHANNELS,
    DEFAULT_KERNEL_LENGTHS, HEAD_CHANNELS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_rows, BatchNormStats, Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sketchio::PointSet;
use crate::tensor::Tensor;

/// Convolution weights: kernel `[k, C_in, C_out]` and bias `[C_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Convolution followed by batch norm (and ReLU in the forward pass).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn<T> {
    pub conv: Conv<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: BatchNormStats<T>,
}

impl<T: Scalar> Conv<T> {
    /// Fan-in uniform: `U(-b, b)` with `b = sqrt(1 / (k * C_in))`, zero bias.
    fn init(k: usize, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / (k * c_in) as f64).sqrt();
        Self {
            kernel: Tensor::from_fn(&[k, c_in, c_out], |_| T::of(rng.gen_range(-bound..bound))),
            bias: Tensor::zeros(&[c_out]),
        }
    }
}

impl<T: Scalar> ConvBn<T> {
    fn init(k: usize, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv::init(k, c_in, c_out, rng),
            gamma: Tensor::full(&[c_out], T::one()),
            beta: Tensor::zeros(&[c_out]),
            stats: BatchNormStats::new(c_out),
        }
    }
}

/// Per-point class probabilities, `N × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<T> {
    values: Tensor<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    /// Wraps an `[N, C]` probability tensor.
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "score matrix must be [N, C], got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn from_logits(logits: &Tensor<T>) -> Result<Self> {
        Self::new(softmax_rows(logits))
    }

    pub fn n_points(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn row(&self, n: usize) -> &[T] {
        self.values.row(0, n)
    }

    /// Highest-probability class per point, ties to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n_points()).map(|n| argmax(self.row(n))).collect()
    }
}

/// Index of the first maximal entry.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Nodes recorded for one column.
#[derive(Clone, Debug)]
pub struct ColumnTrace {
    pub f_c1: Var,
    pub f_c2: Var,
    pub f_c3: Var,
    pub f_g: Var,
    pub f_p: Var,
}

/// Nodes recorded by [`Model::forward_graph`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub columns: Vec<ColumnTrace>,
    pub aggregated: Var,
    pub head: Vec<Var>,
    pub logits: Var,
    /// Batch-norm outputs in [`Model::bn_layers`] order.
    pub batch_norms: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: MCPNetConfig,
    columns: Vec<Vec<ConvBn<T>>>,
    head: Vec<ConvBn<T>>,
    output: Conv<T>,
}

impl<T: Scalar> Model<T> {
    /// Seeded initialization. Layers are initialized in parameter order.
    pub fn init(config: MCPNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns = Vec::with_capacity(config.num_columns());
        for (c, col) in config.columns.iter().enumerate() {
            let widths = config.column_widths(c);
            let mut c_in = 2;
            let mut layers = Vec::with_capacity(3);
            for &w in &widths {
                layers.push(ConvBn::init(col.kernel_length, c_in, w, &mut rng));
                c_in = w;
            }
            columns.push(layers);
        }
        let mut c_in = config.aggregated_width();
        let mut head = Vec::with_capacity(4);
        for &w in &config.head_widths() {
            head.push(ConvBn::init(1, c_in, w, &mut rng));
            c_in = w;
        }
        let output = Conv::init(1, c_in, config.num_classes, &mut rng);
        Ok(Self {
            config,
            columns,
            head,
            output,
        })
    }

    pub fn config(&self) -> &MCPNetConfig {
        &self.config
    }

    pub fn columns(&self) -> &[Vec<ConvBn<T>>] {
        &self.columns
    }

    pub fn head(&self) -> &[ConvBn<T>] {
        &self.head
    }

    pub fn output(&self) -> &Conv<T> {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut Conv<T> {
        &mut self.output
    }

    fn layers(&self) -> impl Iterator<Item = &ConvBn<T>> {
        self.columns.iter().flatten().chain(&self.head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvBn<T>> {
        self.columns.iter_mut().flatten().chain(&mut self.head)
    }

    /// Trainable tensors in canonical order: for every conv+BN layer (columns
    /// first, then head) kernel, bias, gamma, beta; then the output kernel and
    /// bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.extend([&l.conv.kernel, &l.conv.bias, &l.gamma, &l.beta]);
        }
        out.extend([&self.output.kernel, &self.output.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.columns.iter_mut().flatten().chain(&mut self.head) {
            out.extend([
                &mut l.conv.kernel,
                &mut l.conv.bias,
                &mut l.gamma,
                &mut l.beta,
            ]);
        }
        out.extend([&mut self.output.kernel, &mut self.output.bias]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Batch-norm running statistics in layer order.
    pub fn bn_layers(&self) -> Vec<&BatchNormStats<T>> {
        self.layers().map(|l| &l.stats).collect()
    }

    pub fn bn_layers_mut(&mut self) -> Vec<&mut BatchNormStats<T>> {
        self.layers_mut().map(|l| &mut l.stats).collect()
    }

    /// Records every parameter as a leaf, in [`Model::params`] order.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| g.leaf(p.clone(), requires_grad))
            .collect()
    }

    fn conv_bn_relu(
        g: &mut Graph<T>,
        x: Var,
        vars: &[Var],
        layer: &ConvBn<T>,
        mode: Mode,
        bns: &mut Vec<Var>,
    ) -> Result<Var> {
        let c = g.conv1d(x, vars[0], vars[1])?;
        let n = g.batch_norm(c, vars[2], vars[3], &layer.stats, mode)?;
        bns.push(n);
        Ok(g.relu(n))
    }

    fn check(
        g: &Graph<T>,
        v: Var,
        batch: Option<usize>,
        expected: &[usize],
        what: &str,
    ) -> Result<()> {
        let want: Vec<usize> = batch.into_iter().chain(expected.iter().copied()).collect();
        if g.value(v).shape() != want.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: got {:?}, expected {want:?}",
                g.value(v).shape()
            )));
        }
        Ok(())
    }

    /// Runs one column on `points` (`[N, 2]` or `[B, N, 2]`).
    pub fn forward_column_graph(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        col: usize,
        points: Var,
        mode: Mode,
        bns: &mut Vec<Var>,
    ) -> Result<ColumnTrace> {
        let (batch, n) = self.input_dims(g.value(points))?;
        let offset = 12 * col;
        let layers = &self.columns[col];
        let f_c1 = Self::conv_bn_relu(g, points, &params[offset..], &layers[0], mode, bns)?;
        let f_c2 = Self::conv_bn_relu(g, f_c1, &params[offset + 4..], &layers[1], mode, bns)?;
        let f_c3 = Self::conv_bn_relu(g, f_c2, &params[offset + 8..], &layers[2], mode, bns)?;
        let f_g = g.max_pool_seq(f_c3)?;
        let tiled = g.tile_rows(f_g, n)?;
        let f_p = g.concat_cols(&[f_c1, tiled])?;

        let shapes = &self.config.shape_chain(n).columns[col];
        Self::check(g, f_c1, batch, &shapes.f_c1, "f_c1")?;
        Self::check(g, f_c2, batch, &shapes.f_c2, "f_c2")?;
        Self::check(g, f_c3, batch, &shapes.f_c3, "f_c3")?;
        Self::check(g, f_g, batch, &shapes.f_g, "f_g")?;
        Self::check(g, f_p, batch, &shapes.f_p, "f_P")?;
        Ok(ColumnTrace {
            f_c1,
            f_c2,
            f_c3,
            f_g,
            f_p,
        })
    }

    /// Full network up to the logits. `params` must come from [`Model::bind`].
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        points: Var,
        mode: Mode,
    ) -> Result<ForwardTrace> {
        let (batch, n) = self.input_dims(g.value(points))?;
        let chain = self.config.shape_chain(n);
        let mut bns = Vec::new();
        let columns = (0..self.columns.len())
            .map(|c| self.forward_column_graph(g, params, c, points, mode, &mut bns))
            .collect::<Result<Vec<_>>>()?;
        let maps: Vec<Var> = columns.iter().map(|c| c.f_p).collect();
        let aggregated = g.concat_cols(&maps)?;
        Self::check(g, aggregated, batch, &chain.aggregated, "f_P^a")?;

        let mut offset = 12 * self.columns.len();
        let mut x = aggregated;
        let mut head = Vec::with_capacity(self.head.len());
        for (i, layer) in self.head.iter().enumerate() {
            x = Self::conv_bn_relu(g, x, &params[offset..], layer, mode, &mut bns)?;
            Self::check(g, x, batch, &chain.head[i], "head")?;
            head.push(x);
            offset += 4;
        }
        let logits = g.conv1d(x, params[offset], params[offset + 1])?;
        Self::check(g, logits, batch, &chain.logits, "logits")?;
        Ok(ForwardTrace {
            columns,
            aggregated,
            head,
            logits,
            batch_norms: bns,
        })
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// statistics.
    pub fn update_running_stats(&mut self, g: &Graph<T>, trace: &ForwardTrace) {
        for (stats, &node) in self.bn_layers_mut().into_iter().zip(&trace.batch_norms) {
            if let Some((m, v)) = g.batch_stats(node) {
                stats.update(m, v);
            }
        }
    }

    fn input_dims(&self, x: &Tensor<T>) -> Result<(Option<usize>, usize)> {
        match *x.shape() {
            [n, 2] if n > 0 => Ok((None, n)),
            [b, n, 2] if n > 0 && b > 0 => Ok((Some(b), n)),
            _ => Err(Error::ShapeMismatch(format!(
                "points must be [N, 2] or [B, N, 2] with N >= 1, got {:?}",
                x.shape()
            ))),
        }
    }

    /// One column's `f_P` for a single `[N, 2]` input, without side effects.
    pub fn forward_column(&self, col: usize, points: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if col >= self.columns.len() {
            return Err(Error::InvalidConfig(format!("no column {col}")));
        }
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(points.clone());
        let trace = self.forward_column_graph(&mut g, &params, col, x, mode, &mut Vec::new())?;
        Ok(g.value(trace.f_p).clone())
    }

    /// Logits for `[N, 2]` or `[B, N, 2]` input.
    pub fn logits(&self, points: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(points.clone());
        let trace = self.forward_graph(&mut g, &params, x, mode)?;
        Ok(g.value(trace.logits).clone())
    }

    /// Score matrix for a single `[N, 2]` input.
    ///
    /// In [`Mode::Train`] the sample's own statistics normalize each layer;
    /// running statistics are never modified here.
    pub fn forward(&self, points: &Tensor<T>, mode: Mode) -> Result<ScoreMatrix<T>> {
        if points.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "forward takes [N, 2], got {:?}",
                points.shape()
            )));
        }
        ScoreMatrix::from_logits(&self.logits(points, mode)?)
    }

    /// Eval-mode labels, one per point.
    pub fn predict(&self, pts: &PointSet) -> Result<Vec<usize>> {
        Ok(self.forward(&pts.to_tensor(), Mode::Eval)?.argmax())
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |c: &Conv<T>| Conv {
            kernel: c.kernel.cast(),
            bias: c.bias.cast(),
        };
        let layer = |l: &ConvBn<T>| ConvBn {
            conv: conv(&l.conv),
            gamma: l.gamma.cast(),
            beta: l.beta.cast(),
            stats: BatchNormStats {
                mean: l.stats.mean.iter().map(|v| U::of(v.as_f64())).collect(),
                var: l.stats.var.iter().map(|v| U::of(v.as_f64())).collect(),
            },
        };
        Model {
            config: self.config.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c.iter().map(layer).collect())
                .collect(),
            head: self.head.iter().map(layer).collect(),
            output: conv(&self.output),
        }
    }

    pub(crate) fn from_parts(
        config: MCPNetConfig,
        columns: Vec<Vec<ConvBn<T>>>,
        head: Vec<ConvBn<T>>,
        output: Conv<T>,
    ) -> Self {
        Self {
            config,
            columns,
            head,
            output,
        }
    }
}

#[cfg(test)]
mod tests;
