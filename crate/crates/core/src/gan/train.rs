use std::time::Instant;

use super::{DualObjectiveGraph, EntropicGanModel, TrainConfig, TrainLog, TrainRecord};
use crate::batch::SampleBatch;
use crate::error::{invalid, Error, Result};
use crate::nets::OptimizerState;
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

fn grad_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

fn negate(grads: &mut [Tensor]) {
    for g in grads {
        g.data_mut().iter_mut().for_each(|v| *v = -*v);
    }
}

fn real_batch(data: &SampleBatch, size: usize, rng: &mut SeededRng) -> Tensor {
    let idx: Vec<usize> = (0..size).map(|_| rng.index(data.len())).collect();
    data.select(&idx).into_points()
}

fn latent_batch(r: usize, size: usize, rng: &mut SeededRng) -> Result<Tensor> {
    Tensor::matrix(size, r, rng.normals(size * r))
}

/// Discriminator ascent state shared by training and refinement.
struct Critic {
    graph: DualObjectiveGraph,
    opt_d1: OptimizerState,
    opt_d2: OptimizerState,
}

impl Critic {
    fn new(model: &EntropicGanModel, config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            graph: DualObjectiveGraph::new(model, config.batch_size, config.batch_size, false)?,
            opt_d1: OptimizerState::new(config.optimizer, config.disc_lr, &model.d1.params),
            opt_d2: OptimizerState::new(config.optimizer, config.disc_lr, &model.d2.params),
        })
    }

    fn set_lr(&mut self, lr: f64) {
        self.opt_d1.lr = lr;
        self.opt_d2.lr = lr;
    }

    /// One ascent step on `(D₁, D₂)`; returns the discriminator gradient norm.
    fn step(
        &mut self,
        model: &mut EntropicGanModel,
        data: &SampleBatch,
        batch: usize,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let y = real_batch(data, batch, rng);
        let x = latent_batch(model.latent_dim, batch, rng)?;
        let yhat = model.generate(&x)?;
        self.graph.forward(model, &y, &yhat)?;
        let (_, mut g1, mut g2) = self.graph.backward()?;
        let norm = (grad_norm(&g1).powi(2) + grad_norm(&g2).powi(2)).sqrt();
        negate(&mut g1);
        negate(&mut g2);
        self.opt_d1.step(&mut model.d1.params, &g1)?;
        self.opt_d2.step(&mut model.d2.params, &g2)?;
        Ok(norm)
    }
}

fn check_data(config: &TrainConfig, data: &SampleBatch) -> Result<()> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(invalid(format!(
            "training set has {} rows, fewer than the batch size {}",
            data.len(),
            config.batch_size
        )));
    }
    Ok(())
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NumericOverflow { .. } | Error::NonFiniteGradient(_))
}

/// Alternating ascent on the discriminators and descent on the generator.
pub fn train(config: &TrainConfig, data: &SampleBatch) -> Result<(EntropicGanModel, TrainLog)> {
    train_with_checkpoints(config, data, |_| Ok(()))
}

/// [`train`] calling `on_checkpoint` after generator updates
/// `1, 1 + c, 1 + 2c, …` for cadence `c`.
pub fn train_with_checkpoints(
    config: &TrainConfig,
    data: &SampleBatch,
    mut on_checkpoint: impl FnMut(&EntropicGanModel) -> Result<()>,
) -> Result<(EntropicGanModel, TrainLog)> {
    check_data(config, data)?;
    let mut model = EntropicGanModel::init(config, data.dim(), data.len())?;
    let mut log = TrainLog::default();
    if config.iterations == 0 {
        return Ok((model, log));
    }
    let mut rng = SeededRng::new(derive_seed(config.seed, 4));
    let mut critic = Critic::new(&model, config)?;
    let mut full = DualObjectiveGraph::new(&model, config.batch_size, config.batch_size, true)?;
    let mut opt_g = OptimizerState::new(config.optimizer, config.gen_lr, &model.generator.params);
    let mut last_good = model.clone();
    let start = Instant::now();

    for it in 1..=config.iterations {
        let scale = config.lr_schedule.scale(it, config.iterations);
        opt_g.lr = config.gen_lr * scale;
        critic.set_lr(config.disc_lr * scale);
        let mut step = |model: &mut EntropicGanModel, rng: &mut SeededRng| -> Result<TrainRecord> {
            let mut disc_norm = 0.0;
            for _ in 0..config.critic_steps {
                disc_norm = critic.step(model, data, config.batch_size, rng)?;
            }
            let y = real_batch(data, config.batch_size, rng);
            let x = latent_batch(model.latent_dim, config.batch_size, rng)?;
            let objective = full.forward(model, &y, &x)?;
            let (g, _, _) = full.backward()?;
            opt_g.step(&mut model.generator.params, &g)?;
            Ok(TrainRecord {
                iteration: it,
                dual_objective: objective,
                mean_violation: full.mean_violation(),
                generator_grad_norm: grad_norm(&g),
                discriminator_grad_norm: disc_norm,
                wall_time_secs: start.elapsed().as_secs_f64(),
            })
        };
        match step(&mut model, &mut rng) {
            Ok(record) => log.records.push(record),
            Err(e) if is_numeric_failure(&e) => {
                return Err(Error::Diverged {
                    iteration: it,
                    last_good: Box::new(last_good),
                })
            }
            Err(e) => return Err(e),
        }
        model.iterations = it;
        if (it - 1) % config.checkpoint_every == 0 {
            on_checkpoint(&model)?;
            last_good = model.clone();
        }
    }
    Ok((model, log))
}

/// Runs `steps` discriminator ascent steps for a fixed generator.
pub fn refine_discriminators(
    model: &EntropicGanModel,
    data: &SampleBatch,
    steps: usize,
    config: &TrainConfig,
) -> Result<EntropicGanModel> {
    let mut out = model.clone();
    if steps == 0 {
        return Ok(out);
    }
    check_data(config, data)?;
    if data.dim() != model.data_dim {
        return Err(Error::ShapeMismatch {
            context: "refinement data".into(),
            expected: vec![model.data_dim],
            actual: vec![data.dim()],
        });
    }
    let mut rng = SeededRng::new(derive_seed(config.seed, 1_000_000 + model.iterations as u64));
    let mut critic = Critic::new(&out, config)?;
    // continue at the rate training ended with
    critic.set_lr(config.disc_lr * config.lr_schedule.scale(config.iterations, config.iterations));
    for _ in 0..steps {
        match critic.step(&mut out, data, config.batch_size, &mut rng) {
            Ok(_) => {}
            Err(e) if is_numeric_failure(&e) => {
                return Err(Error::Diverged {
                    iteration: model.iterations,
                    last_good: Box::new(model.clone()),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
