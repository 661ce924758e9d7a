//! Entropic GAN trained through its dual: two discriminators `D₁`, `D₂`
//! ascend on `E[D₁(y)] − E[D₂(G(x))] − λE[exp(v/λ)]` while the generator
//! descends on it.

mod dual;
mod sinkhorn_train;
mod train;

use serde::{Deserialize, Serialize};

pub use dual::{dual_objective, record_pairwise_cost, violation, DualObjectiveGraph};
pub use sinkhorn_train::{record_unrolled_entropic_ot, sinkhorn_loss_train, unrolled_sinkhorn_loss};
pub use train::{refine_discriminators, train, train_with_checkpoints};

use crate::batch::SampleBatch;
use crate::error::{invalid, Result};
use crate::nets::{Activation, Mlp, MlpSpec, OptimizerKind};
use crate::ot::LossKind;
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

/// Generator, discriminators and the metadata needed to score samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropicGanModel {
    pub generator: Mlp,
    pub d1: Mlp,
    pub d2: Mlp,
    pub lambda: f64,
    pub loss: LossKind,
    pub latent_dim: usize,
    pub data_dim: usize,
    /// Number of training samples `m`.
    pub train_size: usize,
    pub seed: u64,
    /// Completed generator updates.
    pub iterations: usize,
}

impl EntropicGanModel {
    pub fn new(
        generator: Mlp,
        d1: Mlp,
        d2: Mlp,
        lambda: f64,
        loss: LossKind,
        train_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = generator.spec.output_width();
        for (name, disc) in [("d1", &d1), ("d2", &d2)] {
            if disc.spec.input_width() != d || disc.spec.output_width() != 1 {
                return Err(invalid(format!(
                    "{name} must map R^{d} to R, got widths {:?}",
                    disc.spec.widths()
                )));
            }
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            latent_dim: generator.spec.input_width(),
            data_dim: d,
            generator,
            d1,
            d2,
            lambda,
            loss,
            train_size,
            seed,
            iterations: 0,
        })
    }

    /// Fresh networks initialized from seeds derived from `config.seed`.
    pub fn init(config: &TrainConfig, data_dim: usize, train_size: usize) -> Result<Self> {
        if config.generator.output_width() != data_dim {
            return Err(invalid(format!(
                "generator outputs R^{} but the data lives in R^{data_dim}",
                config.generator.output_width()
            )));
        }
        let disc = config.discriminator_spec(data_dim)?;
        Self::new(
            Mlp::init(config.generator.clone(), derive_seed(config.seed, 1)),
            Mlp::init(disc.clone(), derive_seed(config.seed, 2)),
            Mlp::init(disc, derive_seed(config.seed, 3)),
            config.lambda,
            config.loss,
            train_size,
            config.seed,
        )
    }

    /// `G(x)` for every row of an `n × r` latent matrix.
    pub fn generate(&self, latents: &Tensor) -> Result<Tensor> {
        self.generator.forward(latents)
    }

    /// Pushes `n` prior draws through the generator.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        let mut rng = SeededRng::new(seed);
        let x = Tensor::matrix(n, self.latent_dim, rng.normals(n * self.latent_dim))?;
        SampleBatch::new(self.generate(&x)?)
    }

    /// `v(y, ŷ_j)` for one real point against every row of `yhat`.
    pub fn violations_against(&self, y: &[f64], yhat: &Tensor) -> Result<Vec<f64>> {
        let d1 = self.d1.forward_scalar(&Tensor::matrix(1, y.len(), y.to_vec())?)?[0];
        let d2 = self.d2.forward_scalar(yhat)?;
        Ok(d2
            .iter()
            .enumerate()
            .map(|(j, d2j)| d1 - d2j - self.loss.eval(y, yhat.row(j)))
            .collect())
    }
}

/// Hyperparameters of [`train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub loss: LossKind,
    pub generator: MlpSpec,
    /// Hidden widths of both discriminators (leaky rectifier activations).
    pub discriminator_hidden: Vec<usize>,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub iterations: usize,
    /// Scales both learning rates over the generator iterations.
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub checkpoint_every: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear from the base rate at the first iteration to `final_scale`
    /// times it at the last.
    Linear { final_scale: f64 },
}

impl LrSchedule {
    /// Multiplier for generator iteration `it` in `1..=iterations`.
    pub fn scale(self, it: usize, iterations: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear { final_scale } => {
                if iterations <= 1 {
                    return 1.0;
                }
                let t = (it.clamp(1, iterations) - 1) as f64 / (iterations - 1) as f64;
                1.0 + t * (final_scale - 1.0)
            }
        }
    }
}

/// Reference learning rate for the linear-Gaussian experiments.
pub const REFERENCE_LINEAR_GAUSSIAN_LR: f64 = 1e-6;
/// Reference learning rate for image experiments.
pub const REFERENCE_IMAGE_LR: f64 = 2e-4;

impl TrainConfig {
    /// Desk-scale defaults: λ = 0.1, squared loss, Adam(β₁ = 0.5, β₂ = 0.999)
    /// at 1e-4 annealed linearly to 1e-6, batch 256, 10 critic steps per
    /// generator step.
    pub fn new(generator: MlpSpec) -> Self {
        Self {
            lambda: 0.1,
            loss: LossKind::HalfSquaredL2,
            generator,
            discriminator_hidden: vec![128, 128],
            gen_lr: 1e-4,
            disc_lr: 1e-4,
            optimizer: OptimizerKind::adam(0.5, 0.999),
            batch_size: 256,
            critic_steps: 10,
            iterations: 1000,
            lr_schedule: LrSchedule::Linear { final_scale: 0.01 },
            checkpoint_every: 500,
            seed: 0,
        }
    }

    /// Reference linear-Gaussian settings: lr 1e-6, batch 512.
    pub fn reference(generator: MlpSpec) -> Self {
        Self {
            gen_lr: REFERENCE_LINEAR_GAUSSIAN_LR,
            disc_lr: REFERENCE_LINEAR_GAUSSIAN_LR,
            batch_size: 512,
            ..Self::new(generator)
        }
    }

    pub fn discriminator_spec(&self, data_dim: usize) -> Result<MlpSpec> {
        let mut widths = vec![data_dim];
        widths.extend(&self.discriminator_hidden);
        widths.push(1);
        MlpSpec::uniform(widths, Activation::LeakyRelu)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gen_lr > 0.0) || !(self.disc_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if let LrSchedule::Linear { final_scale } = self.lr_schedule {
            if !(final_scale > 0.0) || !final_scale.is_finite() {
                return Err(invalid("the final learning-rate scale must be positive"));
            }
        }
        if self.batch_size == 0 || self.critic_steps == 0 || self.checkpoint_every == 0 {
            return Err(invalid("batch size, critic steps and checkpoint cadence must be positive"));
        }
        Ok(())
    }
}

/// One generator update.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub dual_objective: f64,
    pub mean_violation: f64,
    pub generator_grad_norm: f64,
    pub discriminator_grad_norm: f64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// Column names of [`TrainLog::csv_rows`]; wall time is left out so that
    /// reruns produce identical files.
    pub const CSV_HEADER: [&'static str; 5] = [
        "iteration",
        "dual_objective",
        "mean_violation",
        "generator_grad_norm",
        "discriminator_grad_norm",
    ];

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [r.dual_objective, r.mean_violation, r.generator_grad_norm, r.discriminator_grad_norm]
                .iter()
                .all(|v| v.is_finite())
        })
    }

    pub fn csv_rows(&self) -> Vec<[String; 5]> {
        self.records
            .iter()
            .map(|r| {
                [
                    r.iteration.to_string(),
                    format!("{:e}", r.dual_objective),
                    format!("{:e}", r.mean_violation),
                    format!("{:e}", r.generator_grad_norm),
                    format!("{:e}", r.discriminator_grad_norm),
                ]
            })
            .collect()
    }
}
