//! Mini-batch SGD with momentum on the per-point cross entropy.
//!
//! A batch is forwarded as one `[B, N, 2]` tensor in train mode, so batch
//! norm statistics are taken over every point of every sample in the batch.
//! Running statistics follow a momentum average during training; after the
//! last epoch they are re-estimated with the final parameters.

use std::io::Write;

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{Graph, Mode, Var};
use crate::data::{batches, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::{ForwardTrace, Model};
use crate::scalar::Scalar;
use crate::sketchio::LabeledPointSet;
use crate::tensor::Tensor;

/// Scaling of the summed cross entropy before the optimizer sees its
/// gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// The plain sum over samples, points and classes.
    Sum,
    /// The sum divided by the points per sample: summed over sketches,
    /// averaged over points.
    #[default]
    PointMean,
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "point-mean" => Ok(Self::PointMean),
            _ => Err(Error::InvalidTrainConfig(format!(
                "unknown loss reduction {s:?} (sum, point-mean)"
            ))),
        }
    }
}

impl std::fmt::Display for Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::PointMean => "point-mean",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    pub reduction: Reduction,
    /// After the last epoch, replace the running batch-norm statistics with
    /// population averages under the final parameters.
    pub population_stats: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 50,
            seed: 0,
            eval_every: 5,
            reduction: Reduction::PointMean,
            population_stats: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }
}

/// Velocity buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        Self::new(&model.params())
    }
}

/// `v = momentum * v + g + weight_decay * p; p -= lr * v`, elementwise.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let (lr, mom, wd) = (
        T::of(cfg.learning_rate),
        T::of(cfg.momentum),
        T::of(cfg.weight_decay),
    );
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mom * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

fn check_batch(batch: &[&LabeledPointSet], model_classes: usize) -> Result<()> {
    let n = batch.first().map(|s| s.len()).ok_or(Error::EmptyDataset)?;
    for s in batch {
        if s.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes {} and {} points",
                n,
                s.len()
            )));
        }
        if let Some(&label) = s.labels.iter().find(|&&l| l >= model_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: model_classes,
            });
        }
    }
    Ok(())
}

/// Summed loss of a batch, its parameter gradients and the batch-norm
/// statistics of the forward pass.
pub struct BatchResult<T> {
    pub loss: T,
    pub grads: Vec<Tensor<T>>,
    /// Per batch-norm layer: (mean, variance) over all points of the batch.
    pub stats: Vec<(Vec<T>, Vec<T>)>,
}

/// Stacks the batch into one `[B, N, 2]` input with concatenated labels.
fn stack<T: Scalar>(batch: &[&LabeledPointSet]) -> Result<(Tensor<T>, Vec<usize>)> {
    let n = batch[0].len();
    let mut data = Vec::with_capacity(batch.len() * n * 2);
    let mut labels = Vec::with_capacity(batch.len() * n);
    for s in batch {
        data.extend(s.base.to_tensor::<T>().data().iter().copied());
        labels.extend_from_slice(&s.labels);
    }
    Ok((Tensor::new(&[batch.len(), n, 2], data)?, labels))
}

fn forward_loss<T: Scalar>(
    model: &Model<T>,
    batch: &[&LabeledPointSet],
    requires_grad: bool,
) -> Result<(Graph<T>, Vec<Var>, ForwardTrace, Var)> {
    check_batch(batch, model.config().num_classes)?;
    let (x, labels) = stack(batch)?;
    let mut g = Graph::new();
    let params = model.bind(&mut g, requires_grad);
    let x = g.constant(x);
    let trace = model.forward_graph(&mut g, &params, x, Mode::Train)?;
    let mask = vec![true; labels.len()];
    let l = g.softmax_cross_entropy(trace.logits, &labels, &mask)?;
    Ok((g, params, trace, l))
}

/// Forward and backward over a batch without modifying the model.
/// Padded duplicates are included in the loss.
pub fn loss_and_grad<T: Scalar>(
    model: &Model<T>,
    batch: &[&LabeledPointSet],
) -> Result<BatchResult<T>> {
    let (g, params, trace, l) = forward_loss(model, batch, true)?;
    let loss = g.value(l).data()[0];
    let stats = trace
        .batch_norms
        .iter()
        .map(|&v| {
            let (m, var) = g.batch_stats(v).expect("train-mode batch norm");
            (m.to_vec(), var.to_vec())
        })
        .collect();
    let mut back = g.backward(l);
    let grads = params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| back.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok(BatchResult { loss, grads, stats })
}

/// Summed train-mode cross entropy of a batch.
pub fn loss_batch<T: Scalar>(model: &Model<T>, batch: &[&LabeledPointSet]) -> Result<T> {
    let (g, _, _, l) = forward_loss(model, batch, false)?;
    Ok(g.value(l).data()[0])
}

/// One optimizer step on a batch; returns the summed batch loss before the
/// step.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    state: &mut OptimizerState<T>,
    batch: &[&LabeledPointSet],
    cfg: &TrainConfig,
) -> Result<T> {
    let mut res = loss_and_grad(model, batch)?;
    for (layer, (m, v)) in model.bn_layers_mut().into_iter().zip(&res.stats) {
        layer.update(m, v);
    }
    if cfg.reduction == Reduction::PointMean {
        let scale = T::of(1.0 / batch[0].len() as f64);
        for g in &mut res.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    sgd_step(&mut model.params_mut(), &res.grads, state, cfg)?;
    Ok(res.loss)
}

/// Sets every batch-norm layer's statistics to the point-weighted average of
/// the train-mode batch statistics over `samples`, taken in dataset order in
/// chunks of `batch_size`.
pub fn population_stats<T: Scalar>(
    model: &mut Model<T>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch: Vec<&LabeledPointSet> = chunk.iter().map(|s| &s.points).collect();
        let (g, _, trace, _) = forward_loss(model, &batch, false)?;
        let rows = batch.iter().map(|s| s.len()).sum::<usize>() as f64;
        total += rows;
        for (i, &v) in trace.batch_norms.iter().enumerate() {
            let (m, var) = g.batch_stats(v).expect("train-mode batch norm");
            if sums.len() <= i {
                sums.push((vec![0.0; m.len()], vec![0.0; m.len()]));
            }
            for (acc, x) in sums[i].0.iter_mut().zip(m) {
                *acc += rows * x.as_f64();
            }
            for (acc, x) in sums[i].1.iter_mut().zip(var) {
                *acc += rows * x.as_f64();
            }
        }
    }
    for (stats, (m, v)) in model.bn_layers_mut().into_iter().zip(sums) {
        stats.mean = m.into_iter().map(|x| T::of(x / total)).collect();
        stats.var = v.into_iter().map(|x| T::of(x / total)).collect();
    }
    Ok(())
}

/// Eval-mode scores of `model` on `samples`.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<EvalReport> {
    metrics::report(samples, |s| model.predict(&s.points.base))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Epoch loss divided by the number of points seen, padding included.
    pub mean_train_loss: f64,
    pub val_p_metric: Option<f64>,
    pub val_c_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io("writing history", e.into());
        w.write_record(["epoch", "mean_train_loss", "val_p_metric", "val_c_metric"])
            .map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                format!("{:.6}", r.mean_train_loss),
                opt(r.val_p_metric),
                opt(r.val_c_metric),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("writing history", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_csv(f)
    }
}

/// Trains `model` for `cfg.epochs` epochs. `on_epoch` sees each record as
/// it is produced.
pub fn fit<T: Scalar>(
    model: &mut Model<T>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut state = OptimizerState::for_model(model);
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut points = 0usize;
        for idx in batches(train.len(), cfg.batch_size, cfg.seed, epoch as u64) {
            let batch: Vec<&LabeledPointSet> = idx.iter().map(|&i| &train[i].points).collect();
            total += train_step(model, &mut state, &batch, cfg)?.as_f64();
            points += batch.iter().map(|s| s.len()).sum::<usize>();
        }
        if epoch == cfg.epochs && cfg.population_stats {
            population_stats(model, train, cfg.batch_size)?;
        }
        let mut rec = EpochRecord {
            epoch,
            mean_train_loss: total / points as f64,
            val_p_metric: None,
            val_c_metric: None,
        };
        if !val.is_empty()
            && cfg.eval_every > 0
            && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)
        {
            let r = evaluate(model, val)?;
            rec.val_p_metric = Some(r.p_metric);
            rec.val_c_metric = Some(r.c_metric);
        }
        on_epoch(&rec);
        history.epochs.push(rec);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::model::{MCPNetConfig, WidthFactor};
    use crate::sketchio::PointSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> Model<f64> {
        let cfg = MCPNetConfig::new(&[1], 3, 8).with_width_factor(WidthFactor::new(1, 16).unwrap());
        Model::init(cfg, seed).unwrap()
    }

    fn sample(n: usize, seed: u64) -> LabeledPointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LabeledPointSet {
            base: PointSet {
                points: (0..n).map(|_| [rng.gen(), rng.gen()]).collect(),
                n_original: n,
            },
            labels: (0..n).map(|_| rng.gen_range(0..3)).collect(),
        }
    }

    fn cfg(lr: f64, momentum: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn uniform_logits_give_n_ln_c() {
        let mut m = tiny_model(0);
        let out = m.output_mut();
        out.kernel = Tensor::zeros(out.kernel.shape());
        out.bias = Tensor::zeros(out.bias.shape());
        let s = sample(4, 1);
        let loss = loss_batch(&m, &[&s]).unwrap();
        assert!((loss - 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_sums_cross_entropy_over_all_points() {
        let m = tiny_model(1);
        let (a, b) = (sample(8, 2), sample(8, 3));
        let la = loss_batch(&m, &[&a]).unwrap();
        assert!((loss_batch(&m, &[&a, &a]).unwrap() - 2.0 * la).abs() < 1e-12);

        let (x, labels) = stack::<f64>(&[&a, &b]).unwrap();
        let logits = m.logits(&x, Mode::Train).unwrap();
        let direct: f64 = logits
            .data()
            .chunks(3)
            .zip(&labels)
            .map(|(row, &y)| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                z.ln() - row[y]
            })
            .sum();
        assert!((loss_batch(&m, &[&a, &b]).unwrap() - direct).abs() < 1e-6);
    }

    #[test]
    fn sgd_closed_forms() {
        let mut p = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::<f64>::from_f64(&[3], &[0.5, 1.0, -1.0]).unwrap();
        let mut st = OptimizerState::new(&[&p]);
        sgd_step(
            &mut [&mut p],
            std::slice::from_ref(&g),
            &mut st,
            &cfg(0.1, 0.0),
        )
        .unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.1, 0.5 + 0.1]);

        let mut q = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let start = q.clone();
        let mut st = OptimizerState::new(&[&q]);
        for _ in 0..2 {
            sgd_step(
                &mut [&mut q],
                std::slice::from_ref(&g),
                &mut st,
                &cfg(0.01, 0.9),
            )
            .unwrap();
        }
        for i in 0..3 {
            let moved: f64 = q.data()[i] - start.data()[i];
            assert!((moved + 0.029 * g.data()[i]).abs() < 1e-12);
        }

        let zero = Tensor::zeros(&[3]);
        let mut r = start.clone();
        let mut st = OptimizerState::new(&[&r]);
        sgd_step(&mut [&mut r], &[zero], &mut st, &cfg(0.01, 0.9)).unwrap();
        assert_eq!(r, start);

        let mut wrong = Tensor::<f64>::zeros(&[2]);
        assert!(sgd_step(
            &mut [&mut wrong],
            std::slice::from_ref(&g),
            &mut st,
            &cfg(0.01, 0.9)
        )
        .is_err());
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = Tensor::<f64>::from_f64(&[1], &[2.0]).unwrap();
        let mut st = OptimizerState::new(&[&p]);
        let c = TrainConfig {
            weight_decay: 0.5,
            ..cfg(0.1, 0.0)
        };
        sgd_step(&mut [&mut p], &[Tensor::zeros(&[1])], &mut st, &c).unwrap();
        assert!((p.data()[0] - 1.9f64).abs() < 1e-12);
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let m = tiny_model(5);
        let (a, b) = (sample(8, 6), sample(8, 7));
        let res = loss_and_grad(&m, &[&a, &b]).unwrap();
        let (x, labels) = stack::<f64>(&[&a, &b]).unwrap();
        let loss = |g: &mut Graph<f64>, vars: &[Var]| {
            let x = g.constant(x.clone());
            let t = m.forward_graph(g, vars, x, Mode::Train)?;
            g.softmax_cross_entropy(t.logits, &labels, &[true; 16])
        };
        let inputs: Vec<Tensor<f64>> = m.params().into_iter().cloned().collect();
        let report = gradcheck(loss, &inputs).unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        assert!(report.skipped * 4 <= report.checked, "{report:?}");

        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let l = loss(&mut g, &vars).unwrap();
        assert_eq!(g.value(l).data()[0], res.loss);
        let grads = g.backward(l);
        for (v, r) in vars.iter().zip(&res.grads) {
            assert!(grads.get(*v).unwrap().max_abs_diff(r) < 1e-10);
        }
    }

    #[test]
    fn point_mean_scales_the_step_by_points() {
        let (a, b) = (sample(8, 8), sample(8, 9));
        let batch = [&a, &b];
        let mean_cfg = cfg(0.08, 0.0);
        let sum_cfg = TrainConfig {
            reduction: Reduction::Sum,
            ..cfg(0.01, 0.0)
        };
        let mut m1 = tiny_model(4);
        let mut m2 = m1.clone();
        let mut s1 = OptimizerState::for_model(&m1);
        let mut s2 = OptimizerState::for_model(&m2);
        let l1 = train_step(&mut m1, &mut s1, &batch, &mean_cfg).unwrap();
        let l2 = train_step(&mut m2, &mut s2, &batch, &sum_cfg).unwrap();
        assert_eq!(l1, l2);
        for (p, q) in m1.params().into_iter().zip(m2.params()) {
            assert!(p.max_abs_diff(q) < 1e-12);
        }
        assert_eq!("sum".parse::<Reduction>().unwrap(), Reduction::Sum);
        assert!("mean".parse::<Reduction>().is_err());
    }

    #[test]
    fn population_stats_match_train_mode() {
        let mut m = tiny_model(6);
        let samples: Vec<Sample> = (0..3)
            .map(|i| Sample {
                path: format!("s{i}.png").into(),
                category: "x".into(),
                num_classes: 3,
                points: sample(8, 20 + i),
            })
            .collect();
        population_stats(&mut m, &samples, 10).unwrap();
        let batch: Vec<&LabeledPointSet> = samples.iter().map(|s| &s.points).collect();
        let (x, _) = stack::<f64>(&batch).unwrap();
        let train = m.logits(&x, Mode::Train).unwrap();
        let eval = m.logits(&x, Mode::Eval).unwrap();
        assert!(train.max_abs_diff(&eval) < 1e-9);

        let before = m.clone();
        let c = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(fit(&mut m, &samples, &[], &c, |_| {})
            .unwrap()
            .epochs
            .is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn tiny_learning_rate_leaves_params() {
        let mut m = tiny_model(2);
        let before: Vec<Tensor<f64>> = m.params().into_iter().cloned().collect();
        let mut st = OptimizerState::for_model(&m);
        let s = sample(8, 9);
        for _ in 0..3 {
            train_step(&mut m, &mut st, &[&s], &cfg(1e-300, 0.9)).unwrap();
        }
        for (a, b) in before.iter().zip(m.params()) {
            assert!(a.max_abs_diff(b) < 1e-250);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(cfg(0.0, 0.9).validate().is_err());
        assert!(cfg(0.01, 1.0).validate().is_err());
        assert!(TrainConfig {
            weight_decay: -1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn label_out_of_range() {
        let m = tiny_model(0);
        let mut s = sample(8, 0);
        s.labels[3] = 7;
        assert!(matches!(
            loss_batch(&m, &[&s]),
            Err(Error::LabelOutOfRange {
                label: 7,
                classes: 3
            })
        ));
    }

    #[test]
    fn history_csv() {
        let h = History {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    mean_train_loss: 1.5,
                    val_p_metric: None,
                    val_c_metric: None,
                },
                EpochRecord {
                    epoch: 2,
                    mean_train_loss: 1.25,
                    val_p_metric: Some(0.5),
                    val_c_metric: Some(0.25),
                },
            ],
        };
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,mean_train_loss,val_p_metric,val_c_metric\n1,1.500000,,\n2,1.250000,0.500000,0.250000\n"
        );
    }
}
