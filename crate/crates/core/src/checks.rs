//! Finite-difference checks of every differentiable op and of a small
//! network's loss, shared by the CLI and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, BatchNormStats, GradcheckReport, Graph, Mode, Var};
use crate::error::Result;
use crate::model::{MCPNetConfig, Model, WidthFactor};
use crate::tensor::Tensor;

/// Tolerance on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// A check also fails when more than this fraction of elements had to be
/// skipped at kinks.
pub const MAX_SKIPPED_FRACTION: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct NamedReport {
    pub name: &'static str,
    pub report: GradcheckReport,
}

impl NamedReport {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
            && self.report.skipped as f64 <= MAX_SKIPPED_FRACTION * self.report.checked as f64
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values with magnitude in `[0.1, 1)` so no ReLU sits near its kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces any node to a scalar through fixed random weights, so every
/// output element contributes a distinct gradient.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let c = *shape.last().expect("rank >= 1");
    let x = match shape.len() {
        1 => g.tile_rows(v, 1)?,
        _ => v,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(&mut rng, &[1, c, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv1d(x, w, b)?;
    Ok(g.sum(y))
}

/// Runs every op check plus the MCPNet-1 loss check for one seed.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<NamedReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name, report| out.push(NamedReport { name, report });

    let x = random(&mut rng, &[6, 3]);
    let w = random(&mut rng, &[3, 3, 4]);
    let b = random(&mut rng, &[4]);
    push(
        "conv1d",
        gradcheck(
            |g, v| {
                let y = g.conv1d(v[0], v[1], v[2])?;
                project(g, y, seed)
            },
            &[x, w, b],
        )?,
    );

    let xb = random(&mut rng, &[2, 5, 3]);
    let w = random(&mut rng, &[5, 3, 2]);
    let b = random(&mut rng, &[2]);
    push(
        "conv1d_batched",
        gradcheck(
            |g, v| {
                let y = g.conv1d(v[0], v[1], v[2])?;
                project(g, y, seed + 1)
            },
            &[xb, w, b],
        )?,
    );

    let x = random(&mut rng, &[7, 3]);
    let gamma = random(&mut rng, &[3]);
    let beta = random(&mut rng, &[3]);
    let stats = BatchNormStats {
        mean: vec![0.1, -0.2, 0.3],
        var: vec![0.5, 1.5, 2.0],
    };
    for (name, mode) in [
        ("batch_norm_train", Mode::Train),
        ("batch_norm_eval", Mode::Eval),
    ] {
        push(
            name,
            gradcheck(
                |g, v| {
                    let y = g.batch_norm(v[0], v[1], v[2], &stats, mode)?;
                    project(g, y, seed + 2)
                },
                &[x.clone(), gamma.clone(), beta.clone()],
            )?,
        );
    }

    let x = away_from_zero(&mut rng, &[5, 4]);
    push(
        "relu",
        gradcheck(
            |g, v| {
                let y = g.relu(v[0]);
                project(g, y, seed + 3)
            },
            &[x],
        )?,
    );

    let x = random(&mut rng, &[6, 4]);
    push(
        "max_pool_seq",
        gradcheck(
            |g, v| {
                let y = g.max_pool_seq(v[0])?;
                project(g, y, seed + 4)
            },
            &[x],
        )?,
    );

    let x = random(&mut rng, &[3]);
    push(
        "tile_rows",
        gradcheck(
            |g, v| {
                let y = g.tile_rows(v[0], 4)?;
                project(g, y, seed + 5)
            },
            &[x],
        )?,
    );

    let a = random(&mut rng, &[4, 2]);
    let c = random(&mut rng, &[4, 3]);
    push(
        "concat_cols",
        gradcheck(
            |g, v| {
                let y = g.concat_cols(&[v[0], v[1]])?;
                project(g, y, seed + 6)
            },
            &[a, c],
        )?,
    );

    let logits = random(&mut rng, &[5, 4]).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
    let mask = [true, true, false, true, true];
    push(
        "softmax_cross_entropy",
        gradcheck(
            |g, v| g.softmax_cross_entropy(v[0], &labels, &mask),
            &[logits],
        )?,
    );

    let a = random(&mut rng, &[3, 2]);
    let c = random(&mut rng, &[3, 2]);
    push(
        "add_sum",
        gradcheck(
            |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, seed + 7)
            },
            &[a, c],
        )?,
    );

    push("mcpnet1_loss", model_loss_check(seed)?);
    Ok(out)
}

/// MCPNet-1 at width factor 1/16 on 8 points and 3 classes; checks the
/// summed cross entropy with respect to the input points and every
/// parameter.
pub fn model_loss_check(seed: u64) -> Result<GradcheckReport> {
    let cfg = MCPNetConfig::new(&[1], 3, 8).with_width_factor(WidthFactor::new(1, 16)?);
    let model = Model::<f64>::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let points = Tensor::from_fn(&[8, 2], |_| rng.gen_range(0.0..1.0));
    let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..3)).collect();
    let mask = [true; 8];
    let mut inputs = vec![points];
    inputs.extend(model.params().into_iter().cloned());
    gradcheck(
        |g, v| {
            let t = model.forward_graph(g, &v[1..], v[0], Mode::Train)?;
            g.softmax_cross_entropy(t.logits, &labels, &mask)
        },
        &inputs,
    )
}
