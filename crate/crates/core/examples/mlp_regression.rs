//! Fits a small leaky-rectifier network to a 1-D function with Adam.

use gan_likelihood::grad::Tape;
use gan_likelihood::nets::{Activation, Mlp, MlpSpec, OptimizerKind, OptimizerState};
use gan_likelihood::rng::SeededRng;
use gan_likelihood::Tensor;

fn main() -> gan_likelihood::Result<()> {
    let spec = MlpSpec::uniform(vec![1, 32, 32, 1], Activation::LeakyRelu)?;
    let mut net = Mlp::init(spec.clone(), 7);
    let n = 128;
    let mut rng = SeededRng::new(8);
    let xs: Vec<f64> = (0..n).map(|_| 4.0 * rng.uniform() - 2.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.5 * x).collect();
    let x = Tensor::matrix(n, 1, xs)?;
    let y = Tensor::matrix(n, 1, ys)?;

    // mean squared error recorded once, replayed every step
    let mut tape = Tape::new();
    let xv = tape.input(&[n, 1]);
    let yv = tape.input(&[n, 1]);
    let params = spec.declare_params(&mut tape);
    let pred = spec.record(&mut tape, xv, &params)?;
    let diff = tape.sub(pred, yv)?;
    let sq = tape.square(diff);
    tape.mean(sq, None)?;

    let mut opt = OptimizerState::new(OptimizerKind::adam(0.9, 0.999), 1e-2, &net.params);
    for step in 0..=2000 {
        let mut inputs = vec![&x, &y];
        inputs.extend(net.params.tensors());
        let loss = tape.forward(&inputs)?.item();
        let grads = tape.backward()?.split_off(2);
        opt.step(&mut net.params, &grads)?;
        if step % 500 == 0 {
            println!("step {step:>4}  mse {loss:.6}");
        }
    }
    let probe = Tensor::matrix(3, 1, vec![-1.5, 0.0, 1.5])?;
    for (x, f) in probe.data().iter().zip(net.forward(&probe)?.data()) {
        println!("f({x:+.1}) = {f:+.4}   target {:+.4}", x.sin() + 0.5 * x);
    }
    Ok(())
}
