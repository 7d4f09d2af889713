use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-3;

/// Outcome of [`gradcheck`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// Elements compared.
    pub checked: usize,
    /// Elements whose stencil crossed a ReLU kink or a max-pool argmax change.
    /// Central differences are not a valid reference there.
    pub skipped: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, element by element over every input.
///
/// Each element is probed at steps `h` and `h / 2` with
/// `h = GRADCHECK_STEP`, and the two quotients are combined as
/// `(4 D(h/2) - D(h)) / 3`.
///
/// `f` receives a fresh graph and one leaf per input and must return a scalar
/// node. It may be called many times and must be deterministic.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>], grads: bool| -> Result<(Graph<f64>, Var, Vec<Var>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), grads)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "gradcheck function must return a scalar, got {:?}",
                g.value(out).shape()
            )));
        }
        Ok((g, out, vars))
    };

    let (graph, out, vars) = eval(inputs, true)?;
    let base_signature = graph.branch_signature();
    let grads = graph.backward(out);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    drop(graph);

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let original = input.data()[idx];
            let mut side = |delta: f64| -> Result<(f64, bool)> {
                probe[which].data_mut()[idx] = original + delta;
                let (g, o, _) = eval(&probe, false)?;
                Ok((g.value(o).data()[0], g.branch_signature() == base_signature))
            };
            let h = GRADCHECK_STEP;
            let mut smooth = true;
            let mut diff = |step: f64| -> Result<f64> {
                let (plus, sp) = side(step)?;
                let (minus, sm) = side(-step)?;
                smooth &= sp && sm;
                Ok((plus - minus) / (2.0 * step))
            };
            let coarse = diff(h)?;
            let fine = diff(h / 2.0)?;
            probe[which].data_mut()[idx] = original;
            if !smooth {
                report.skipped += 1;
                continue;
            }
            // Richardson extrapolation cancels the h^2 term.
            let numeric = (4.0 * fine - coarse) / 3.0;
            let a = analytic[which].data()[idx];
            let mut err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if !err.is_finite() {
                err = f64::INFINITY;
            }
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
