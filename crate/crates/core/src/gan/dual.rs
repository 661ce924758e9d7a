use super::EntropicGanModel;
use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::grad::{Tape, Var};
use crate::nets::MlpSpec;
use crate::ot::LossKind;
use crate::tensor::Tensor;

/// `v(y, ŷ) = D₁(y) − D₂(ŷ) − ℓ(y, ŷ)`
pub fn violation(y: &[f64], yhat: &[f64], model: &EntropicGanModel) -> Result<f64> {
    for (what, p) in [("y", y), ("yhat", yhat)] {
        if p.len() != model.data_dim {
            return Err(Error::ShapeMismatch {
                context: format!("violation {what}"),
                expected: vec![model.data_dim],
                actual: vec![p.len()],
            });
        }
    }
    let row = |p: &[f64]| Tensor::matrix(1, p.len(), p.to_vec());
    let d1 = model.d1.forward_scalar(&row(y)?)?[0];
    let d2 = model.d2.forward_scalar(&row(yhat)?)?[0];
    Ok(d1 - d2 - model.loss.eval(y, yhat))
}

fn ones(rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], vec![1.0; rows * cols]).expect("ones")
}

/// Records the `n × m` matrix `ℓ(y_i, ŷ_j)` for `y: n×d`, `yhat: m×d`.
///
/// The squared loss is expanded as `‖y‖²/2 + ‖ŷ‖²/2 − y·ŷᵀ`. The norm loss
/// sums per-coordinate squared differences and takes `sqrt(z + 1e-24)`, which
/// keeps coincident points differentiable.
pub fn record_pairwise_cost(tape: &mut Tape, y: Var, yhat: Var, loss: LossKind) -> Result<Var> {
    let d = tape.shape(y)[1];
    match loss {
        LossKind::HalfSquaredL2 => {
            let ysq = tape.square(y);
            let ynorm = tape.sum(ysq, Some(1))?;
            let hsq = tape.square(yhat);
            let ones_d = tape.constant(ones(1, d));
            let hnorm = tape.affine(ones_d, hsq, None)?;
            let cross = tape.affine(y, yhat, None)?;
            tape.lincomb(&[(ynorm, 0.5), (hnorm, 0.5), (cross, -1.0)], 0.0)
        }
        LossKind::L2Norm => {
            let mut squares = Vec::with_capacity(d);
            for k in 0..d {
                let mut e = Tensor::zeros(&[1, d]);
                e.data_mut()[k] = 1.0;
                let e = tape.constant(e);
                let yk = tape.affine(y, e, None)?;
                let hk = tape.affine(e, yhat, None)?;
                let diff = tape.sub(yk, hk)?;
                squares.push((tape.square(diff), 1.0));
            }
            let z = tape.lincomb(&squares, 1e-24)?;
            let logz = tape.log(z);
            let half = tape.scale(logz, 0.5);
            Ok(tape.exp(half))
        }
    }
}

/// Records the dual objective on precomputed generator outputs; returns
/// `(v, objective)`.
fn record_dual(
    tape: &mut Tape,
    y: Var,
    yhat: Var,
    d1: (&MlpSpec, &[Var]),
    d2: (&MlpSpec, &[Var]),
    loss: LossKind,
    lambda: f64,
) -> Result<(Var, Var)> {
    let (n, m) = (tape.shape(y)[0], tape.shape(yhat)[0]);
    let d1y = d1.0.record(tape, y, d1.1)?;
    let d2h = d2.0.record(tape, yhat, d2.1)?;
    let one = tape.constant(ones(1, 1));
    let d2row = tape.affine(one, d2h, None)?;
    let cost = record_pairwise_cost(tape, y, yhat, loss)?;
    let v = tape.lincomb(&[(d1y, 1.0), (d2row, -1.0), (cost, -1.0)], 0.0)?;
    // λ·mean exp(v/λ) = exp(LSE(v/λ) + log λ − log nm)
    let scaled = tape.scale(v, 1.0 / lambda);
    let lse = tape.logsumexp(scaled, None)?;
    let shifted = tape.add_scalar(lse, lambda.ln() - ((n * m) as f64).ln());
    let penalty = tape.exp(shifted);
    let m1 = tape.mean(d1y, None)?;
    let m2 = tape.mean(d2h, None)?;
    let obj = tape.lincomb(&[(m1, 1.0), (m2, -1.0), (penalty, -1.0)], 0.0)?;
    Ok((v, obj))
}

/// A recorded dual objective for fixed batch sizes.
///
/// With `with_generator` the tape inputs are
/// `[y, x, G params…, D₁ params…, D₂ params…]`; without it the generator
/// outputs are fed directly: `[y, ŷ, D₁ params…, D₂ params…]`.
pub struct DualObjectiveGraph {
    tape: Tape,
    violation: Var,
    with_generator: bool,
    generator_params: usize,
    d1_params: usize,
}

impl DualObjectiveGraph {
    pub fn new(model: &EntropicGanModel, n_real: usize, n_fake: usize, with_generator: bool) -> Result<Self> {
        let mut tape = Tape::new();
        let d = model.data_dim;
        let y = tape.input(&[n_real, d]);
        let (yhat, generator_params) = if with_generator {
            let x = tape.input(&[n_fake, model.latent_dim]);
            let gp = model.generator.spec.declare_params(&mut tape);
            (model.generator.spec.record(&mut tape, x, &gp)?, gp.len())
        } else {
            (tape.input(&[n_fake, d]), 0)
        };
        let d1p = model.d1.spec.declare_params(&mut tape);
        let d2p = model.d2.spec.declare_params(&mut tape);
        let (violation, _) = record_dual(
            &mut tape,
            y,
            yhat,
            (&model.d1.spec, &d1p),
            (&model.d2.spec, &d2p),
            model.loss,
            model.lambda,
        )?;
        Ok(Self {
            tape,
            violation,
            with_generator,
            generator_params,
            d1_params: d1p.len(),
        })
    }

    pub fn tape(&mut self) -> &mut Tape {
        &mut self.tape
    }

    /// Input tensors in tape order; `second` is `x` or `ŷ` depending on the
    /// graph kind.
    pub fn inputs<'a>(&self, model: &'a EntropicGanModel, y: &'a Tensor, second: &'a Tensor) -> Vec<&'a Tensor> {
        let mut v = vec![y, second];
        if self.with_generator {
            v.extend(model.generator.params.tensors());
        }
        v.extend(model.d1.params.tensors());
        v.extend(model.d2.params.tensors());
        v
    }

    pub fn forward(&mut self, model: &EntropicGanModel, y: &Tensor, second: &Tensor) -> Result<f64> {
        let inputs = self.inputs(model, y, second);
        Ok(self.tape.forward(&inputs)?.item())
    }

    /// Mean of `v` over all pairs from the last forward pass.
    pub fn mean_violation(&self) -> f64 {
        let v = self.tape.value_slice(self.violation);
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Gradients split into `(G, D₁, D₂)` parameter groups.
    pub fn backward(&mut self) -> Result<(Vec<Tensor>, Vec<Tensor>, Vec<Tensor>)> {
        let mut grads = self.tape.backward()?;
        let d2 = grads.split_off(2 + self.generator_params + self.d1_params);
        let d1 = grads.split_off(2 + self.generator_params);
        let g = grads.split_off(2);
        Ok((g, d1, d2))
    }
}

/// `mean D₁(y) − mean D₂(G(x)) − λ·mean_{ij} exp(v_ij/λ)` over all
/// real/latent pairs.
pub fn dual_objective(real: &SampleBatch, latent: &SampleBatch, model: &EntropicGanModel) -> Result<f64> {
    if real.is_empty() || latent.is_empty() {
        return Err(Error::InvalidArgument("dual objective needs nonempty batches".into()));
    }
    let mut graph = DualObjectiveGraph::new(model, real.len(), latent.len(), true)?;
    graph.forward(model, real.points(), latent.points())
}

/// Values of every network parameter in one flat vector, for comparisons.
#[cfg(test)]
pub(crate) fn flat_params(net: &crate::nets::Mlp) -> Vec<f64> {
    net.params.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::TrainConfig;
    use crate::grad::{finite_difference_gradient, relative_error};
    use crate::nets::{MlpParams, MlpSpec};
    use crate::rng::SeededRng;

    fn zero_model(r: usize, d: usize, loss: LossKind, lambda: f64) -> EntropicGanModel {
        let mut cfg = TrainConfig::new(MlpSpec::linear_generator(r, d));
        cfg.loss = loss;
        cfg.lambda = lambda;
        let mut m = EntropicGanModel::init(&cfg, d, 1).unwrap();
        m.d1.params = MlpParams::zeros(&m.d1.spec);
        m.d2.params = MlpParams::zeros(&m.d2.spec);
        m
    }

    fn small_model(seed: u64, loss: LossKind) -> EntropicGanModel {
        let mut cfg = TrainConfig::new(MlpSpec::uniform(vec![2, 3, 2], crate::nets::Activation::LeakyRelu).unwrap());
        cfg.discriminator_hidden = vec![4];
        cfg.loss = loss;
        cfg.lambda = 0.7;
        cfg.seed = seed;
        EntropicGanModel::init(&cfg, 2, 5).unwrap()
    }

    #[test]
    fn violation_of_zero_discriminators() {
        let m = zero_model(2, 2, LossKind::HalfSquaredL2, 0.1);
        assert_eq!(violation(&[0.3, 1.0], &[0.3, 1.0], &m).unwrap(), 0.0);
        assert_eq!(violation(&[0.0, 0.0], &[1.0, 0.0], &m).unwrap(), -0.5);
        assert!(violation(&[0.0], &[1.0, 0.0], &m).is_err());
    }

    #[test]
    fn single_pair_objective_is_minus_lambda() {
        // G ≡ 0 by zeroing its last layer
        let mut m = zero_model(1, 1, LossKind::HalfSquaredL2, 0.3);
        let last = m.generator.params.layers.len() - 1;
        m.generator.params.layers[last] = crate::nets::Layer {
            weight: Tensor::zeros(&[1, 128]),
            bias: Tensor::zeros(&[1]),
        };
        let y = SampleBatch::from_scalars(&[0.0]);
        let x = SampleBatch::from_scalars(&[1.7]);
        let v = dual_objective(&y, &x, &m).unwrap();
        assert!((v + 0.3).abs() < 1e-15);
    }

    fn scalar_oracle(m: &EntropicGanModel, y: &SampleBatch, x: &SampleBatch) -> f64 {
        let yhat = m.generate(x.points()).unwrap();
        let d1 = m.d1.forward_scalar(y.points()).unwrap();
        let d2 = m.d2.forward_scalar(&yhat).unwrap();
        let (n, k) = (y.len(), x.len());
        let mut pen = 0.0;
        for i in 0..n {
            for j in 0..k {
                let v = d1[i] - d2[j] - m.loss.eval(y.point(i), yhat.row(j));
                pen += (v / m.lambda).exp();
            }
        }
        d1.iter().sum::<f64>() / n as f64 - d2.iter().sum::<f64>() / k as f64 - m.lambda * pen / (n * k) as f64
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = SeededRng::new(4);
        for loss in [LossKind::HalfSquaredL2, LossKind::L2Norm] {
            let m = small_model(9, loss);
            let y = SampleBatch::new(Tensor::matrix(3, 2, rng.normals(6)).unwrap()).unwrap();
            let x = SampleBatch::new(Tensor::matrix(4, 2, rng.normals(8)).unwrap()).unwrap();
            let a = dual_objective(&y, &x, &m).unwrap();
            let b = scalar_oracle(&m, &y, &x);
            assert!((a - b).abs() < 1e-10, "{loss:?}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_discriminators_plug_in() {
        let m = zero_model(2, 2, LossKind::L2Norm, 0.5);
        let mut rng = SeededRng::new(2);
        let y = SampleBatch::new(Tensor::matrix(3, 2, rng.normals(6)).unwrap()).unwrap();
        let x = SampleBatch::new(Tensor::matrix(2, 2, rng.normals(4)).unwrap()).unwrap();
        let yhat = m.generate(x.points()).unwrap();
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                want += (-m.loss.eval(y.point(i), yhat.row(j)) / 0.5).exp();
            }
        }
        want *= -0.5 / 6.0;
        assert!((dual_objective(&y, &x, &m).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn large_violations_stay_finite() {
        let mut m = zero_model(1, 1, LossKind::HalfSquaredL2, 0.01);
        let last = m.d1.params.layers.len() - 1;
        m.d1.params.layers[last].bias.data_mut()[0] = 5.0; // v/λ = 500
        let y = SampleBatch::from_scalars(&[0.0]);
        let x = SampleBatch::from_scalars(&[0.0]);
        let mut g = DualObjectiveGraph::new(&m, 1, 1, false).unwrap();
        let v = g.forward(&m, y.points(), x.points()).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(12);
        for loss in [LossKind::HalfSquaredL2, LossKind::L2Norm] {
            let m = small_model(3, loss);
            let y = Tensor::matrix(3, 2, rng.normals(6)).unwrap();
            let x = Tensor::matrix(2, 2, rng.normals(4)).unwrap();
            let mut g = DualObjectiveGraph::new(&m, 3, 2, true).unwrap();
            let inputs: Vec<Tensor> = g.inputs(&m, &y, &x).into_iter().cloned().collect();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            g.tape().forward(&refs).unwrap();
            let analytic = g.tape().backward().unwrap();
            let numeric = finite_difference_gradient(g.tape(), &refs, 1e-5).unwrap();
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-5, "{loss:?}: {err}");
        }
    }
}
