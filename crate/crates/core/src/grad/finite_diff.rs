use super::Tape;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Central-difference estimate of the gradient of the tape's scalar output
/// with respect to every input coordinate.
///
/// Leaves the tape evaluated at the unperturbed inputs.
pub fn finite_difference_gradient(tape: &mut Tape, inputs: &[&Tensor], h: f64) -> Result<Vec<Tensor>> {
    if !(h > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work: Vec<Tensor> = inputs.iter().map(|t| (*t).clone()).collect();
    let mut grads = Vec::with_capacity(inputs.len());
    for slot in 0..work.len() {
        let mut g = Tensor::zeros(work[slot].shape());
        for k in 0..work[slot].numel() {
            let orig = work[slot].data()[k];
            work[slot].data_mut()[k] = orig + h;
            let plus = eval_scalar(tape, &work)?;
            work[slot].data_mut()[k] = orig - h;
            let minus = eval_scalar(tape, &work)?;
            work[slot].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    tape.forward(inputs)?;
    Ok(grads)
}

fn eval_scalar(tape: &mut Tape, inputs: &[Tensor]) -> Result<f64> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let out = tape.forward(&refs)?;
    if out.numel() != 1 {
        return Err(crate::Error::NonScalarOutput(out.shape().to_vec()));
    }
    Ok(out.item())
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)` over a list of tensors,
/// falling back to the absolute error when both are below `1e-8`.
pub fn relative_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.data().iter().zip(y.data()) {
            diff += (u - v) * (u - v);
            na += u * u;
            nb += v * v;
        }
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale < 1e-8 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}
