use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gan_likelihood::experiments::{
    cmd_evolution, cmd_gen_data, cmd_likelihood, cmd_sinkhorn_check, cmd_table1, cmd_table2, cmd_train, error_line,
    read_dataset, EvolutionConfig, GenDataConfig, GeneratorKind, LikelihoodCmdConfig, SinkhornCheckConfig,
    Table1Config, Table2Config, TrainCmdConfig, TrainSettings,
};
use gan_likelihood::gan::LrSchedule;
use gan_likelihood::inference::WeightMode;
use gan_likelihood::likelihood::{ConstantMode, EntropyMode, LikelihoodOptions};
use gan_likelihood::ot::LossKind;
use gan_likelihood::Result;

#[derive(Parser)]
#[command(name = "gan-likelihood", version, about = "Entropic GAN training and surrogate likelihoods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a linear-Gaussian dataset and save its generating matrix.
    GenData(GenDataArgs),
    /// Train an entropic GAN on a dataset.
    Train(TrainArgs),
    /// Score every row of a samples file under a trained model.
    Likelihood(LikelihoodArgs),
    /// Approximation gap and surrogate likelihood for linear generators.
    Table1(Table1Args),
    /// Exact against surrogate likelihood for leaky generators.
    Table2(Table2Args),
    /// Likelihood histograms of held-out data across training.
    Evolution(EvolutionArgs),
    /// Sinkhorn against the reference solver on random instances.
    SinkhornCheck(SinkhornCheckArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory; GAN_LIKELIHOOD_OUT_DIR takes precedence.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 3000)]
    iterations: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    critic_steps: usize,
    /// Generator learning rate; 1e-4 by default, 3e-5 for table2.
    #[arg(long)]
    gen_lr: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    disc_lr: f64,
    /// Hidden widths of the generator and discriminators.
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
    /// Both learning rates fall linearly to this fraction of their initial
    /// value; 1 keeps them constant.
    #[arg(long, default_value_t = 0.01)]
    final_lr_scale: f64,
}

impl TrainFlags {
    fn settings(&self) -> TrainSettings {
        self.settings_with_gen_lr(TrainSettings::default().gen_lr)
    }

    fn settings_with_gen_lr(&self, default_gen_lr: f64) -> TrainSettings {
        TrainSettings {
            iterations: self.iterations,
            batch_size: self.batch_size,
            critic_steps: self.critic_steps,
            gen_lr: self.gen_lr.unwrap_or(default_gen_lr),
            disc_lr: self.disc_lr,
            hidden: self.hidden.clone(),
            lr_schedule: LrSchedule::Linear {
                final_scale: self.final_lr_scale,
            },
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    latent_dim: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base name of the dataset and oracle files.
    #[arg(long, default_value = "data")]
    name: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value = "half-squared-l2")]
    loss: LossKind,
    #[arg(long, default_value = "linear")]
    generator: GeneratorKind,
    #[arg(long)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct LikelihoodArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    /// Latent draws per scored point.
    #[arg(long, default_value_t = 10_000)]
    latent_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `prior`, `snis` or `impulse`.
    #[arg(long, default_value = "prior")]
    weight_mode: WeightMode,
    /// `discrete` or `differential`.
    #[arg(long, default_value = "discrete")]
    entropy_mode: EntropyMode,
    /// `standard`, `dimensional`, `per-sample` or `none`.
    #[arg(long, default_value = "standard")]
    constant_mode: ConstantMode,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct Table1Args {
    #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    train_size: usize,
    #[arg(long, default_value_t = 100)]
    test_points: usize,
    #[arg(long, default_value_t = 10_000)]
    latent_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct Table2Args {
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    max_latent_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    train_size: usize,
    #[arg(long, default_value_t = 100)]
    test_points: usize,
    #[arg(long, default_value_t = 10_000)]
    latent_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvolutionArgs {
    #[arg(long, default_value_t = 2.0)]
    offset: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    train_size: usize,
    #[arg(long, default_value_t = 1000)]
    held_out: usize,
    #[arg(long, default_value_t = 1000)]
    latent_samples: usize,
    #[arg(long, default_value_t = 100)]
    refine_steps: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = -200.0, allow_hyphen_values = true)]
    range_lo: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    range_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SinkhornCheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 6)]
    max_points: usize,
    #[arg(long, default_value_t = 2)]
    point_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::GenData(a) => {
            let out = cmd_gen_data(&GenDataConfig {
                data_dim: a.dim,
                latent_dim: a.latent_dim,
                samples: a.samples,
                lambda: a.lambda,
                offset: a.offset,
                seed: a.seed,
                name: a.name,
                out_dir: a.out.out_dir,
            })?;
            Ok(vec![out.data, out.oracle])
        }
        Command::Train(a) => {
            let d = read_dataset(&a.data)?.dim();
            let generator = a.generator.spec(a.latent_dim, d, &a.train.hidden)?;
            let mut train = a.train.settings().config(generator, a.lambda, a.seed);
            train.loss = a.loss;
            let out = cmd_train(&TrainCmdConfig {
                data: a.data,
                train,
                out_dir: a.out.out_dir,
            })?;
            let mut files = vec![out.model, out.log];
            files.extend(out.checkpoints);
            Ok(files)
        }
        Command::Likelihood(a) => Ok(vec![cmd_likelihood(&LikelihoodCmdConfig {
            model: a.model,
            samples: a.samples,
            options: LikelihoodOptions {
                samples: a.latent_samples,
                seed: a.seed,
                weight_mode: a.weight_mode,
                entropy_mode: a.entropy_mode,
                constant_mode: a.constant_mode,
            },
            out_dir: a.out.out_dir,
        })?]),
        Command::Table1(a) => Ok(vec![
            cmd_table1(&Table1Config {
                dims: a.dims,
                lambda: a.lambda,
                train_size: a.train_size,
                test_points: a.test_points,
                samples: a.latent_samples,
                train: a.train.settings(),
                seed: a.seed,
                out_dir: a.out.out_dir,
            })?
            .0,
        ]),
        Command::Table2(a) => Ok(vec![
            cmd_table2(&Table2Config {
                dims: a.dims,
                max_latent_dim: a.max_latent_dim,
                lambda: a.lambda,
                train_size: a.train_size,
                test_points: a.test_points,
                samples: a.latent_samples,
                train: a.train.settings_with_gen_lr(Table2Config::default().train.gen_lr),
                seed: a.seed,
                out_dir: a.out.out_dir,
            })?
            .0,
        ]),
        Command::Evolution(a) => {
            let defaults = EvolutionConfig::default();
            let (summary, checkpoints) = cmd_evolution(&EvolutionConfig {
                lambda: a.lambda,
                offset: a.offset,
                train_size: a.train_size,
                held_out: a.held_out,
                samples: a.latent_samples,
                refine_steps: a.refine_steps,
                bins: a.bins,
                range: (a.range_lo, a.range_hi),
                train: a.train.settings(),
                seed: a.seed,
                out_dir: a.out.out_dir,
                ..defaults
            })?;
            let mut files = vec![summary];
            files.extend(checkpoints.into_iter().map(|c| c.histogram));
            Ok(files)
        }
        Command::SinkhornCheck(a) => Ok(vec![
            cmd_sinkhorn_check(&SinkhornCheckConfig {
                instances: a.instances,
                max_points: a.max_points,
                point_dim: a.point_dim,
                seed: a.seed,
                out_dir: a.out.out_dir,
            })?
            .0,
        ]),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
