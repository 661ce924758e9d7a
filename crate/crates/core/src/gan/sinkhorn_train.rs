use std::time::Instant;

use super::{record_pairwise_cost, EntropicGanModel, TrainConfig, TrainLog, TrainRecord};
use crate::batch::SampleBatch;
use crate::error::{invalid, Error, Result};
use crate::grad::{Tape, Var};
use crate::nets::OptimizerState;
use crate::ot::LossKind;
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

/// Records `iters` log-domain Sinkhorn sweeps between the uniform empirical
/// measures on the rows of `p` and `q`, and returns the dual value
/// `mean φ − mean ψ`, which equals the KL-regularized transport value once
/// the iterations have converged.
pub fn record_unrolled_entropic_ot(
    tape: &mut Tape,
    p: Var,
    q: Var,
    loss: LossKind,
    lambda: f64,
    iters: usize,
) -> Result<Var> {
    if iters == 0 {
        return Err(invalid("at least one unrolled sinkhorn iteration is needed"));
    }
    let (n, m) = (tape.shape(p)[0], tape.shape(q)[0]);
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let cost = record_pairwise_cost(tape, p, q, loss)?;
    let mut psi: Option<Var> = None;
    let mut phi = None;
    for _ in 0..iters {
        let t = match psi {
            None => tape.lincomb(&[(cost, -1.0 / lambda)], log_b)?,
            Some(psi) => tape.lincomb(&[(psi, -1.0 / lambda), (cost, -1.0 / lambda)], log_b)?,
        };
        let lse = tape.logsumexp(t, Some(1))?;
        let f = tape.scale(lse, -lambda);
        let t = tape.lincomb(&[(f, 1.0 / lambda), (cost, -1.0 / lambda)], log_a)?;
        let lse = tape.logsumexp(t, Some(0))?;
        psi = Some(tape.scale(lse, lambda));
        phi = Some(f);
    }
    let mean_phi = tape.mean(phi.expect("iters > 0"), None)?;
    let mean_psi = tape.mean(psi.expect("iters > 0"), None)?;
    tape.lincomb(&[(mean_phi, 1.0), (mean_psi, -1.0)], 0.0)
}

fn record_loss(tape: &mut Tape, p: Var, q: Var, loss: LossKind, lambda: f64, iters: usize) -> Result<Var> {
    let pq = record_unrolled_entropic_ot(tape, p, q, loss, lambda, iters)?;
    let pp = record_unrolled_entropic_ot(tape, p, p, loss, lambda, iters)?;
    let qq = record_unrolled_entropic_ot(tape, q, q, loss, lambda, iters)?;
    tape.lincomb(&[(pq, 2.0), (pp, -1.0), (qq, -1.0)], 0.0)
}

/// `2W(P,Q) − W(P,P) − W(Q,Q)` with every `W` approximated by `iters`
/// unrolled Sinkhorn sweeps.
pub fn unrolled_sinkhorn_loss(
    p: &SampleBatch,
    q: &SampleBatch,
    loss: LossKind,
    lambda: f64,
    iters: usize,
) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch {
            context: "sinkhorn loss batches".into(),
            expected: vec![p.dim()],
            actual: vec![q.dim()],
        });
    }
    let mut tape = Tape::new();
    let pv = tape.input(p.points().shape());
    let qv = tape.input(q.points().shape());
    record_loss(&mut tape, pv, qv, loss, lambda, iters)?;
    Ok(tape.forward(&[p.points(), q.points()])?.item())
}

/// Generator-only training on the unrolled Sinkhorn loss between real and
/// generated minibatches. The discriminators are left at their
/// initialization; `critic_steps` is ignored and the log's discriminator
/// columns are zero.
pub fn sinkhorn_loss_train(
    config: &TrainConfig,
    data: &SampleBatch,
    unrolled_iters: usize,
) -> Result<(EntropicGanModel, TrainLog)> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(invalid("training set is smaller than the batch size"));
    }
    let mut model = EntropicGanModel::init(config, data.dim(), data.len())?;
    let mut log = TrainLog::default();
    if config.iterations == 0 {
        return Ok((model, log));
    }
    let b = config.batch_size;
    let mut tape = Tape::new();
    let y = tape.input(&[b, data.dim()]);
    let x = tape.input(&[b, model.latent_dim]);
    let gp = model.generator.spec.declare_params(&mut tape);
    let yhat = model.generator.spec.record(&mut tape, x, &gp)?;
    record_loss(&mut tape, y, yhat, config.loss, config.lambda, unrolled_iters)?;

    let mut rng = SeededRng::new(derive_seed(config.seed, 5));
    let mut opt = OptimizerState::new(config.optimizer, config.gen_lr, &model.generator.params);
    let mut last_good = model.clone();
    let start = Instant::now();
    for it in 1..=config.iterations {
        let idx: Vec<usize> = (0..b).map(|_| rng.index(data.len())).collect();
        let yb = data.select(&idx).into_points();
        let xb = Tensor::matrix(b, model.latent_dim, rng.normals(b * model.latent_dim))?;
        let result = (|| -> Result<(f64, f64)> {
            let mut inputs = vec![&yb, &xb];
            inputs.extend(model.generator.params.tensors());
            let value = tape.forward(&inputs)?.item();
            let grads = tape.backward()?.split_off(2);
            let norm = grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
            opt.step(&mut model.generator.params, &grads)?;
            Ok((value, norm))
        })();
        match result {
            Ok((value, norm)) => log.records.push(TrainRecord {
                iteration: it,
                dual_objective: value,
                mean_violation: 0.0,
                generator_grad_norm: norm,
                discriminator_grad_norm: 0.0,
                wall_time_secs: start.elapsed().as_secs_f64(),
            }),
            Err(Error::NumericOverflow { .. }) | Err(Error::NonFiniteGradient(_)) => {
                return Err(Error::Diverged {
                    iteration: it,
                    last_good: Box::new(last_good),
                })
            }
            Err(e) => return Err(e),
        }
        model.iterations = it;
        if (it - 1) % config.checkpoint_every == 0 {
            last_good = model.clone();
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{finite_difference_gradient, relative_error};
    use crate::nets::MlpSpec;
    use crate::ot::{entropic_ot_value, sinkhorn_loss};

    fn batch(n: usize, d: usize, seed: u64) -> SampleBatch {
        let mut rng = SeededRng::new(seed);
        SampleBatch::new(Tensor::matrix(n, d, rng.normals(n * d)).unwrap()).unwrap()
    }

    #[test]
    fn identical_batches_give_zero() {
        let p = batch(6, 2, 1);
        for loss in [LossKind::HalfSquaredL2, LossKind::L2Norm] {
            assert_eq!(unrolled_sinkhorn_loss(&p, &p, loss, 0.5, 5).unwrap(), 0.0);
        }
    }

    #[test]
    fn converges_to_exact_values() {
        let (p, q) = (batch(5, 2, 2), batch(4, 2, 3));
        let exact = sinkhorn_loss(&p, &q, LossKind::HalfSquaredL2, 1.0).unwrap();
        let unrolled = unrolled_sinkhorn_loss(&p, &q, LossKind::HalfSquaredL2, 1.0, 300).unwrap();
        assert!((exact - unrolled).abs() < 1e-8);
        let mut tape = Tape::new();
        let pv = tape.input(&[5, 2]);
        let qv = tape.input(&[4, 2]);
        record_unrolled_entropic_ot(&mut tape, pv, qv, LossKind::HalfSquaredL2, 1.0, 300).unwrap();
        let w = tape.forward(&[p.points(), q.points()]).unwrap().item();
        let want = entropic_ot_value(&p, &q, LossKind::HalfSquaredL2, 1.0).unwrap();
        assert!((w - want).abs() < 1e-8);
    }

    #[test]
    fn gradient_through_five_iterations() {
        let (p, q) = (batch(4, 2, 4), batch(3, 2, 5));
        for loss in [LossKind::HalfSquaredL2, LossKind::L2Norm] {
            let mut tape = Tape::new();
            let pv = tape.input(&[4, 2]);
            let qv = tape.input(&[3, 2]);
            record_loss(&mut tape, pv, qv, loss, 0.5, 5).unwrap();
            let inputs = [p.points(), q.points()];
            tape.forward(&inputs).unwrap();
            let analytic = tape.backward().unwrap();
            let numeric = finite_difference_gradient(&mut tape, &inputs, 1e-5).unwrap();
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "{loss:?}: {err}");
        }
    }

    #[test]
    fn fits_one_dimensional_mean() {
        let mut rng = SeededRng::new(6);
        let pts: Vec<f64> = rng.normals(512).iter().map(|v| 0.5 * v + 2.0).collect();
        let data = SampleBatch::from_scalars(&pts);
        let mut cfg = TrainConfig::new(MlpSpec::uniform(vec![1, 1], crate::nets::Activation::Identity).unwrap());
        cfg.lambda = 0.5;
        cfg.batch_size = 32;
        cfg.gen_lr = 0.05;
        cfg.iterations = 300;
        cfg.discriminator_hidden = vec![4];
        let (m, log) = sinkhorn_loss_train(&cfg, &data, 10).unwrap();
        assert_eq!(log.len(), 300);
        let fake = m.sample(4000, 9).unwrap();
        let mean = fake.points().data().iter().sum::<f64>() / 4000.0;
        let data_mean = pts.iter().sum::<f64>() / pts.len() as f64;
        assert!((mean - data_mean).abs() < 0.1, "{mean} vs {data_mean}");
    }
}
