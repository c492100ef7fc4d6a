use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{gate_gradients, gates_of, AccumulatedMask, MetaPolicy, PromptSet};

use super::Phase;

/// Mean squared error over all entries and its gradient w.r.t. `output`.
pub fn mse(output: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if output.shape() != target.shape() {
        return Err(Error::shape(
            "mse",
            target.rows() * target.cols(),
            output.rows() * output.cols(),
        ));
    }
    let n = output.as_slice().len();
    if n == 0 {
        return Err(Error::invalid("batch", "empty batch"));
    }
    let scale = 2.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    for ((g, o), t) in grad.as_mut_slice().iter_mut().zip(output.as_slice()).zip(target.as_slice()) {
        let d = o - t;
        loss += d * d;
        *g = scale * d;
    }
    Ok((loss / n as f64, grad))
}

/// One supervised update on the masked sub-network.
///
/// The θ phase backpropagates, gates the gradients by the accumulated mask
/// and steps the weights; the α phase steps the prompts through the
/// straight-through estimator and leaves the weights alone. Returns the
/// batch loss before the update.
pub fn supervised_step(
    policy: &mut MetaPolicy,
    prompts: &mut PromptSet,
    accumulated: &AccumulatedMask,
    inputs: &Matrix,
    targets: &Matrix,
    phase: Phase,
    lr: f64,
) -> Result<f64> {
    if inputs.rows() == 0 {
        return Err(Error::invalid("batch", "empty batch"));
    }
    let gates = gates_of(&prompts.masks());
    let (out, cache) = policy.forward(&gates, inputs)?;
    let (loss, grad) = mse(&out, targets)?;
    match phase {
        Phase::Theta => {
            let raw = policy.backward_theta(&cache, &grad)?;
            let gated = gate_gradients(&raw, accumulated)?;
            policy.apply_update(&gated, lr)?;
        }
        Phase::Alpha => {
            let g = policy.backward_alpha(prompts, &cache, &grad)?;
            prompts.apply_gradient(&g, lr)?;
        }
    }
    Ok(loss)
}

/// Fraction of rows whose mean squared error over outputs is below `margin`.
pub fn regression_success(prediction: &Matrix, target: &Matrix, margin: f64) -> f64 {
    let n = prediction.rows();
    if n == 0 {
        return 0.0;
    }
    let o = prediction.cols() as f64;
    let mut hits = 0usize;
    for b in 0..n {
        let err: f64 = prediction
            .row(b)
            .iter()
            .zip(target.row(b))
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / o;
        if err < margin {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}
