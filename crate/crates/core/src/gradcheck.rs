//! Central finite-difference checks of tape gradients.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn weighted_output(build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Tensor], weights: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).data().iter().zip(weights.data()).map(|(x, w)| x * w).sum())
}

/// Largest relative error over every input element between the reverse-mode
/// gradient of `sum(build(inputs) * w)` and its central difference with step
/// `eps`. The weights `w` are drawn uniformly from [-2, 2].
pub fn max_relative_error<R: Rng + ?Sized>(
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    eps: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let weights = Tensor::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for idx in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= eps;
            let numeric = (weighted_output(build, &plus, &weights)? - weighted_output(build, &minus, &weights)?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[idx], numeric));
        }
    }
    Ok(worst)
}
