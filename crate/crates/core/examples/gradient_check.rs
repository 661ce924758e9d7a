//! Reverse-mode gradients of a small graph against central differences.

use gan_likelihood::grad::{finite_difference_gradient, relative_error, Tape};
use gan_likelihood::rng::SeededRng;
use gan_likelihood::Tensor;

fn main() -> gan_likelihood::Result<()> {
    let mut rng = SeededRng::new(1);
    let x = Tensor::matrix(4, 3, rng.normals(12))?;
    let w = Tensor::matrix(2, 3, rng.normals(6))?;

    // f(x, w) = mean over rows of logsumexp(x·wᵀ)
    let mut tape = Tape::new();
    let xv = tape.input(&[4, 3]);
    let wv = tape.input(&[2, 3]);
    let xw = tape.affine(xv, wv, None)?;
    let lse = tape.logsumexp(xw, Some(1))?;
    tape.mean(lse, None)?;

    let inputs = [&x, &w];
    let value = tape.forward(&inputs)?.item();
    let analytic = tape.backward()?;
    let numeric = finite_difference_gradient(&mut tape, &inputs, 1e-6)?;
    println!("f = {value:.6}");
    println!("∂f/∂w = {:?}", analytic[1].data());
    println!("relative error against central differences: {:.2e}", relative_error(&analytic, &numeric));
    Ok(())
}
