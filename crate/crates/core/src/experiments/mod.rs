//! Experiment commands behind the `gan-likelihood` binary. Every command
//! writes into an output directory (overridable through
//! `GAN_LIKELIHOOD_OUT_DIR`) and starts each file with a metadata line.

pub mod hexfloat;
mod io;
mod model_file;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use io::{
    fmt_f64, load_oracle, metadata_line, read_csv, read_dataset, save_oracle, write_csv, write_dataset, TOOL_NAME,
    TOOL_VERSION,
};
pub use model_file::{load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT_VERSION};

use crate::batch::SampleBatch;
use crate::error::{invalid, Error, Result};
use crate::gan::{refine_discriminators, LrSchedule, train_with_checkpoints, EntropicGanModel, TrainConfig, TrainLog};
use crate::gaussian::LinearGaussianOracle;
use crate::inference::{latent_posterior, WeightMode};
use crate::likelihood::{
    likelihood_constant, likelihood_histogram, median, per_sample_likelihoods, report_from_posterior, ConstantMode,
    EntropyMode, LikelihoodOptions,
};
use crate::nets::MlpSpec;
use crate::ot::{
    brute_force_entropic_ot, cost_matrix, entropic_ot_value, entropy, sinkhorn, sinkhorn_loss, LossKind,
    SinkhornOptions,
};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

pub const OUT_DIR_ENV: &str = "GAN_LIKELIHOOD_OUT_DIR";

/// `GAN_LIKELIHOOD_OUT_DIR` if set, else `requested`; created if missing.
pub fn resolve_out_dir(requested: &Path) -> Result<PathBuf> {
    let dir = match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => requested.to_path_buf(),
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn serialize_path<S: serde::Serializer>(path: &Path, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&file_name(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GenData,
    Train,
    Likelihood,
    Table1,
    Table2,
    Evolution,
    SinkhornCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GenData => "gen-data",
            ExperimentKind::Train => "train",
            ExperimentKind::Likelihood => "likelihood",
            ExperimentKind::Table1 => "table1",
            ExperimentKind::Table2 => "table2",
            ExperimentKind::Evolution => "evolution",
            ExperimentKind::SinkhornCheck => "sinkhorn-check",
        }
    }
}

/// Training hyperparameters shared by the table and evolution commands;
/// the generator is chosen per command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub iterations: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub hidden: Vec<usize>,
    pub lr_schedule: LrSchedule,
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::new(MlpSpec::linear_generator(1, 1));
        Self {
            iterations: 3000,
            batch_size: base.batch_size,
            critic_steps: base.critic_steps,
            gen_lr: base.gen_lr,
            disc_lr: base.disc_lr,
            hidden: vec![128, 128],
            lr_schedule: base.lr_schedule,
            checkpoint_every: 500,
        }
    }
}

impl TrainSettings {
    pub fn config(&self, generator: MlpSpec, lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda,
            iterations: self.iterations,
            batch_size: self.batch_size,
            critic_steps: self.critic_steps,
            gen_lr: self.gen_lr,
            disc_lr: self.disc_lr,
            discriminator_hidden: self.hidden.clone(),
            lr_schedule: self.lr_schedule,
            checkpoint_every: self.checkpoint_every,
            seed,
            ..TrainConfig::new(generator)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// `r → h → h → d` without activations.
    Linear,
    /// `r → h → h → d` with leaky rectifiers.
    Leaky,
}

impl GeneratorKind {
    pub fn spec(self, r: usize, d: usize, hidden: &[usize]) -> Result<MlpSpec> {
        let mut widths = vec![r];
        widths.extend(hidden);
        widths.push(d);
        let act = match self {
            GeneratorKind::Linear => crate::nets::Activation::Identity,
            GeneratorKind::Leaky => crate::nets::Activation::LeakyRelu,
        };
        MlpSpec::uniform(widths, act)
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(GeneratorKind::Linear),
            "leaky" => Ok(GeneratorKind::Leaky),
            other => Err(invalid(format!("unknown generator `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------- gen-data

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub samples: usize,
    pub lambda: f64,
    /// Added to every coordinate of the data mean.
    pub offset: f64,
    pub seed: u64,
    pub name: String,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            latent_dim: 2,
            samples: 10_000,
            lambda: 0.1,
            offset: 0.0,
            seed: 0,
            name: "data".into(),
            out_dir: PathBuf::from("."),
        }
    }
}

pub struct GenDataOutput {
    pub data: PathBuf,
    pub oracle: PathBuf,
}

/// The data-generating oracle of [`cmd_gen_data`]: `G` with `N(0, 1/r)`
/// entries drawn from `derive_seed(seed, 0)`.
pub fn gen_data_oracle(config: &GenDataConfig) -> Result<LinearGaussianOracle> {
    let o = LinearGaussianOracle::random(config.data_dim, config.latent_dim, config.lambda, derive_seed(config.seed, 0))?;
    LinearGaussianOracle::with_offset(&o.g(), &vec![config.offset; config.data_dim], config.lambda)
}

pub fn cmd_gen_data(config: &GenDataConfig) -> Result<GenDataOutput> {
    let dir = resolve_out_dir(&config.out_dir)?;
    let oracle = gen_data_oracle(config)?;
    let data = if config.samples == 0 {
        SampleBatch::new(Tensor::zeros(&[0, config.data_dim]))?
    } else {
        oracle.sample_data(config.samples, derive_seed(config.seed, 1))?
    };
    let meta = metadata_line(ExperimentKind::GenData.name(), config)?;
    let out = GenDataOutput {
        data: dir.join(format!("{}.csv", config.name)),
        oracle: dir.join(format!("{}.oracle.toml", config.name)),
    };
    write_dataset(&out.data, &meta, &data)?;
    save_oracle(&oracle, &out.oracle)?;
    Ok(out)
}

// ------------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainCmdConfig {
    #[serde(serialize_with = "serialize_path")]
    pub data: PathBuf,
    pub train: TrainConfig,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub struct TrainOutput {
    pub model: PathBuf,
    pub log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.toml")
}

fn write_train_log(path: &Path, meta: &str, log: &TrainLog) -> Result<()> {
    write_csv(path, meta, &TrainLog::CSV_HEADER, log.csv_rows().into_iter().map(Vec::from))
}

pub fn cmd_train(config: &TrainCmdConfig) -> Result<TrainOutput> {
    let dir = resolve_out_dir(&config.out_dir)?;
    let data = read_dataset(&config.data)?;
    let meta = metadata_line(ExperimentKind::Train.name(), config)?;
    let mut checkpoints = Vec::new();
    let (model, log) = train_with_checkpoints(&config.train, &data, |m| {
        let path = dir.join(checkpoint_name(m.iterations));
        save_model(m, &path)?;
        checkpoints.push(path);
        Ok(())
    })?;
    let out = TrainOutput {
        model: dir.join("model.toml"),
        log: dir.join("train_log.csv"),
        checkpoints,
    };
    save_model(&model, &out.model)?;
    write_train_log(&out.log, &meta, &log)?;
    Ok(out)
}

// -------------------------------------------------------------- likelihood

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCmdConfig {
    #[serde(serialize_with = "serialize_path")]
    pub model: PathBuf,
    #[serde(serialize_with = "serialize_path")]
    pub samples: PathBuf,
    pub options: LikelihoodOptions,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub const LIKELIHOOD_COLUMNS: [&str; 7] = ["index", "total", "cost", "entropy", "prior", "constant", "std_error"];

pub fn cmd_likelihood(config: &LikelihoodCmdConfig) -> Result<PathBuf> {
    let dir = resolve_out_dir(&config.out_dir)?;
    let model = load_model(&config.model)?;
    let data = read_dataset(&config.samples)?;
    if data.dim() != model.data_dim {
        return Err(Error::ShapeMismatch {
            context: "samples file against model".into(),
            expected: vec![model.data_dim],
            actual: vec![data.dim()],
        });
    }
    let reports = per_sample_likelihoods(&data, &model, &config.options)?;
    let path = dir.join("likelihood.csv");
    let rows = reports.iter().enumerate().map(|(i, r)| {
        let mut row = vec![i.to_string()];
        row.extend([r.total, r.cost, r.entropy, r.prior, r.constant, r.std_error].map(fmt_f64));
        row
    });
    write_csv(&path, &metadata_line(ExperimentKind::Likelihood.name(), config)?, &LIKELIHOOD_COLUMNS, rows)?;
    Ok(path)
}

// ------------------------------------------------------------------ tables

/// Snis weights, differential entropy and the per-sample constant: the
/// estimator whose target is a lower bound on `log f_Y(y)`.
fn table_options(samples: usize, seed: u64) -> LikelihoodOptions {
    LikelihoodOptions::differential(samples, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub dims: Vec<usize>,
    pub lambda: f64,
    pub train_size: usize,
    pub test_points: usize,
    /// Latent draws per test point.
    pub samples: usize,
    pub train: TrainSettings,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            dims: vec![2, 5, 10],
            lambda: 0.1,
            train_size: 10_000,
            test_points: 100,
            samples: 10_000,
            train: TrainSettings::default(),
            seed: 0,
            out_dir: PathBuf::from("."),
        }
    }
}

/// One dimension of table 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    pub dim: usize,
    pub gap: f64,
    pub gap_std_error: f64,
    pub surrogate: f64,
    pub surrogate_std_error: f64,
    /// Mean exact log-likelihood of the test points under the data model.
    pub data_log_likelihood: f64,
    pub status: String,
}

pub const TABLE1_COLUMNS: [&str; 7] = [
    "dimension",
    "approximation_gap",
    "gap_std_error",
    "surrogate_log_likelihood",
    "surrogate_std_error",
    "data_log_likelihood",
    "status",
];

struct Fitted {
    oracle: LinearGaussianOracle,
    test: SampleBatch,
    model: EntropicGanModel,
}

fn fit_dimension(
    d: usize,
    r: usize,
    generator: GeneratorKind,
    lambda: f64,
    train_size: usize,
    test_points: usize,
    train: &TrainSettings,
    seed: u64,
) -> Result<Fitted> {
    let dim_seed = derive_seed(seed, d as u64);
    let oracle = LinearGaussianOracle::random(d, r, lambda, derive_seed(dim_seed, 0))?;
    let data = oracle.sample_data(train_size, derive_seed(dim_seed, 1))?;
    let test = oracle.sample_data(test_points, derive_seed(dim_seed, 2))?;
    let cfg = train.config(generator.spec(r, d, &train.hidden)?, lambda, derive_seed(dim_seed, 3));
    let (model, _) = crate::gan::train(&cfg, &data)?;
    Ok(Fitted { oracle, test, model })
}

fn mean_and_pooled_se(values: &[(f64, f64)]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.0).sum::<f64>() / n;
    let se = values.iter().map(|v| v.1 * v.1).sum::<f64>().sqrt() / n;
    (mean, se)
}

fn failed_row_status(e: &Error) -> String {
    match e {
        Error::Diverged { iteration, last_good } => {
            format!("diverged at iteration {iteration} (last good {})", last_good.iterations)
        }
        other => other.kind().to_string(),
    }
}

/// Gap and surrogate for one trained linear model, measured against the
/// linear-Gaussian model defined by the generator's own affine map.
pub fn table1_dimension(config: &Table1Config, d: usize) -> Result<Table1Row> {
    let fit = fit_dimension(
        d,
        d,
        GeneratorKind::Linear,
        config.lambda,
        config.train_size,
        config.test_points,
        &config.train,
        config.seed,
    )?;
    let (m, c) = fit.model.generator.affine_map()?;
    let model_oracle = LinearGaussianOracle::with_offset(&m, &c, fit.model.lambda)?;
    let mut gaps = Vec::new();
    let mut totals = Vec::new();
    let constant = likelihood_constant(d, d, fit.model.train_size, fit.model.lambda, ConstantMode::PerSample);
    for i in 0..fit.test.len() {
        let y = fit.test.point(i);
        let opts = table_options(config.samples, derive_seed(config.seed, 1_000 + i as u64));
        let post = latent_posterior(y, &fit.model, opts.samples, opts.seed, WeightMode::Snis)?;
        let report = report_from_posterior(&post, fit.model.loss, EntropyMode::Differential, constant, ConstantMode::PerSample)?;
        let gap = model_oracle.approximation_gap(y, &post)?;
        gaps.push((gap.kl, gap.std_error));
        totals.push((report.total, report.std_error));
    }
    let (gap, gap_se) = mean_and_pooled_se(&gaps);
    let (surrogate, surrogate_se) = mean_and_pooled_se(&totals);
    Ok(Table1Row {
        dim: d,
        gap,
        gap_std_error: gap_se,
        surrogate,
        surrogate_std_error: surrogate_se,
        data_log_likelihood: fit.oracle.mean_exact_log_likelihood(&fit.test)?,
        status: "ok".into(),
    })
}

pub fn cmd_table1(config: &Table1Config) -> Result<(PathBuf, Vec<Table1Row>)> {
    let dir = resolve_out_dir(&config.out_dir)?;
    let mut rows = Vec::new();
    for &d in &config.dims {
        let row = table1_dimension(config, d).unwrap_or_else(|e| Table1Row {
            dim: d,
            gap: f64::NAN,
            gap_std_error: f64::NAN,
            surrogate: f64::NAN,
            surrogate_std_error: f64::NAN,
            data_log_likelihood: f64::NAN,
            status: failed_row_status(&e),
        });
        rows.push(row);
    }
    let path = dir.join("table1.csv");
    let csv_rows = rows.iter().map(|r| {
        let mut v = vec![r.dim.to_string()];
        v.extend(
            [r.gap, r.gap_std_error, r.surrogate, r.surrogate_std_error, r.data_log_likelihood].map(fmt_f64),
        );
        v.push(r.status.clone());
        v
    });
    write_csv(&path, &metadata_line(ExperimentKind::Table1.name(), config)?, &TABLE1_COLUMNS, csv_rows)?;
    Ok((path, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Config {
    pub dims: Vec<usize>,
    /// Latent dimension is `min(d, max_latent_dim)`.
    pub max_latent_dim: usize,
    pub lambda: f64,
    pub train_size: usize,
    pub test_points: usize,
    pub samples: usize,
    pub train: TrainSettings,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for Table2Config {
    fn default() -> Self {
        Self {
            dims: vec![5, 10],
            max_latent_dim: 5,
            lambda: 0.1,
            train_size: 10_000,
            test_points: 100,
            samples: 10_000,
            // a slower generator keeps the leaky generator from over-spreading
            // while the minibatch exp(v/λ) terms are still far below one
            train: TrainSettings { gen_lr: 3e-5, ..TrainSettings::default() },
            seed: 0,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table2Row {
    pub dim: usize,
    pub exact: f64,
    pub surrogate: f64,
    pub surrogate_std_error: f64,
    pub status: String,
}

pub const TABLE2_COLUMNS: [&str; 5] = [
    "dimension",
    "exact_log_likelihood",
    "surrogate_log_likelihood",
    "surrogate_std_error",
    "status",
];

pub fn table2_dimension(config: &Table2Config, d: usize) -> Result<Table2Row> {
    let r = d.min(config.max_latent_dim);
    let fit = fit_dimension(
        d,
        r,
        GeneratorKind::Leaky,
        config.lambda,
        config.train_size,
        config.test_points,
        &config.train,
        config.seed,
    )?;
    let reports = per_sample_likelihoods(
        &fit.test,
        &fit.model,
        &table_options(config.samples, derive_seed(config.seed, 2_000 + d as u64)),
    )?;
    let pairs: Vec<(f64, f64)> = reports.iter().map(|r| (r.total, r.std_error)).collect();
    let (surrogate, se) = mean_and_pooled_se(&pairs);
    Ok(Table2Row {
        dim: d,
        exact: fit.oracle.mean_exact_log_likelihood(&fit.test)?,
        surrogate,
        surrogate_std_error: se,
        status: "ok".into(),
    })
}

pub fn cmd_table2(config: &Table2Config) -> Result<(PathBuf, Vec<Table2Row>)> {
    let dir = resolve_out_dir(&config.out_dir)?;
    let mut rows = Vec::new();
    for &d in &config.dims {
        rows.push(table2_dimension(config, d).unwrap_or_else(|e| Table2Row {
            dim: d,
            exact: f64::NAN,
            surrogate: f64::NAN,
            surrogate_std_error: f64::NAN,
            status: failed_row_status(&e),
        }));
    }
    let path = dir.join("table2.csv");
    let csv_rows = rows.iter().map(|r| {
        let mut v = vec![r.dim.to_string()];
        v.extend([r.exact, r.surrogate, r.surrogate_std_error].map(fmt_f64));
        v.push(r.status.clone());
        v
    });
    write_csv(&path, &metadata_line(ExperimentKind::Table2.name(), config)?, &TABLE2_COLUMNS, csv_rows)?;
    Ok((path, rows))
}

// --------------------------------------------------------------- evolution

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub lambda: f64,
    /// Data mean in every coordinate, away from where a fresh generator
    /// puts its mass.
    pub offset: f64,
    pub train_size: usize,
    pub held_out: usize,
    pub samples: usize,
    pub refine_steps: usize,
    pub bins: usize,
    pub range: (f64, f64),
    pub train: TrainSettings,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            latent_dim: 2,
            lambda: 0.1,
            offset: 2.0,
            train_size: 10_000,
            held_out: 1000,
            samples: 1000,
            refine_steps: 100,
            bins: 50,
            range: (-200.0, 10.0),
            train: TrainSettings::default(),
            seed: 0,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionCheckpoint {
    pub iteration: usize,
    pub median: f64,
    pub histogram: PathBuf,
}

pub const HISTOGRAM_COLUMNS: [&str; 3] = ["bin_lo", "bin_hi", "count"];
pub const EVOLUTION_COLUMNS: [&str; 3] = ["iteration", "median_log_likelihood", "histogram_file"];

pub fn cmd_evolution(config: &EvolutionConfig) -> Result<(PathBuf, Vec<EvolutionCheckpoint>)> {
    let dir = resolve_out_dir(&config.out_dir)?;
    let gen = GenDataConfig {
        data_dim: config.data_dim,
        latent_dim: config.latent_dim,
        samples: config.train_size,
        lambda: config.lambda,
        offset: config.offset,
        seed: config.seed,
        ..GenDataConfig::default()
    };
    let oracle = gen_data_oracle(&gen)?;
    let data = oracle.sample_data(config.train_size, derive_seed(config.seed, 1))?;
    let held_out = oracle.sample_data(config.held_out, derive_seed(config.seed, 2))?;
    let spec = GeneratorKind::Linear.spec(config.latent_dim, config.data_dim, &config.train.hidden)?;
    let cfg = config.train.config(spec, config.lambda, derive_seed(config.seed, 3));
    let meta = metadata_line(ExperimentKind::Evolution.name(), config)?;
    let opts = table_options(config.samples, derive_seed(config.seed, 4));
    let mut checkpoints = Vec::new();
    train_with_checkpoints(&cfg, &data, |model| {
        let refined = refine_discriminators(model, &data, config.refine_steps, &cfg)?;
        let (hist, totals) = likelihood_histogram(&held_out, &refined, config.bins, config.range, &opts)?;
        let path = dir.join(format!("evolution_{:06}.csv", model.iterations));
        let rows = hist
            .rows()
            .map(|(lo, hi, count)| vec![fmt_f64(lo), fmt_f64(hi), count.to_string()]);
        write_csv(&path, &meta, &HISTOGRAM_COLUMNS, rows)?;
        checkpoints.push(EvolutionCheckpoint {
            iteration: model.iterations,
            median: median(&totals),
            histogram: path,
        });
        Ok(())
    })?;
    let summary = dir.join("evolution_summary.csv");
    let rows = checkpoints
        .iter()
        .map(|c| vec![c.iteration.to_string(), fmt_f64(c.median), file_name(&c.histogram)]);
    write_csv(&summary, &meta, &EVOLUTION_COLUMNS, rows)?;
    Ok((summary, checkpoints))
}

// ---------------------------------------------------------- sinkhorn-check

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornCheckConfig {
    pub instances: usize,
    pub max_points: usize,
    pub point_dim: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for SinkhornCheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            max_points: 6,
            point_dim: 2,
            seed: 0,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornCheckRow {
    pub instance: usize,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub loss: LossKind,
    pub identical: bool,
    /// Debiased loss `2W(P,Q) − W(P,P) − W(Q,Q)`.
    pub w_bar: f64,
    pub two_w: f64,
    /// `λ(H(a) + H(b))`
    pub entropy_slack: f64,
    pub sandwich: bool,
    pub max_coupling_error: f64,
}

pub const SINKHORN_CHECK_COLUMNS: [&str; 11] = [
    "instance",
    "n",
    "m",
    "lambda",
    "loss",
    "identical",
    "w_bar",
    "two_w",
    "entropy_slack",
    "sandwich",
    "max_coupling_error",
];

/// Absolute slack granted to the sandwich comparisons for solver error.
pub const SANDWICH_TOLERANCE: f64 = 1e-9;

fn random_weights(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

fn random_cloud(rng: &mut SeededRng, n: usize, d: usize) -> Result<SampleBatch> {
    let w = random_weights(rng, n);
    SampleBatch::with_weights(Tensor::matrix(n, d, rng.normals(n * d))?, w)
}

pub fn sinkhorn_check_instance(config: &SinkhornCheckConfig, k: usize) -> Result<SinkhornCheckRow> {
    let mut rng = SeededRng::new(derive_seed(config.seed, k as u64));
    let n = 1 + rng.index(config.max_points);
    let m = 1 + rng.index(config.max_points);
    let lambda = if k % 2 == 0 { 0.1 } else { 1.0 };
    let loss = if k % 4 < 2 { LossKind::HalfSquaredL2 } else { LossKind::L2Norm };
    let identical = k % 10 == 9;
    let p = random_cloud(&mut rng, n, config.point_dim)?;
    let q = if identical { p.clone() } else { random_cloud(&mut rng, m, config.point_dim)? };
    let m = q.len();
    let w_bar = sinkhorn_loss(&p, &q, loss, lambda)?;
    let two_w = 2.0 * entropic_ot_value(&p, &q, loss, lambda)?;
    let entropy_slack = lambda * (entropy(&p.weights()) + entropy(&q.weights()));
    let sandwich = w_bar <= two_w + SANDWICH_TOLERANCE && two_w <= w_bar + entropy_slack + SANDWICH_TOLERANCE;
    let cost = cost_matrix(loss, &p, &q)?;
    let (a, b) = (p.weights(), q.weights());
    let s = sinkhorn(&cost, &a, &b, lambda, SinkhornOptions::default())?;
    let o = brute_force_entropic_ot(&cost, &a, &b, lambda)?;
    Ok(SinkhornCheckRow {
        instance: k,
        n,
        m,
        lambda,
        loss,
        identical,
        w_bar,
        two_w,
        entropy_slack,
        sandwich,
        max_coupling_error: s.coupling.max_abs_diff(&o),
    })
}

pub fn cmd_sinkhorn_check(config: &SinkhornCheckConfig) -> Result<(PathBuf, Vec<SinkhornCheckRow>)> {
    if config.max_points == 0 || config.max_points > 8 || config.point_dim == 0 {
        return Err(invalid("max-points must be in 1..=8 and point-dim positive"));
    }
    let dir = resolve_out_dir(&config.out_dir)?;
    let rows = (0..config.instances)
        .map(|k| sinkhorn_check_instance(config, k))
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("sinkhorn_check.csv");
    let csv_rows = rows.iter().map(|r| {
        vec![
            r.instance.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            fmt_f64(r.lambda),
            r.loss.name().to_string(),
            r.identical.to_string(),
            fmt_f64(r.w_bar),
            fmt_f64(r.two_w),
            fmt_f64(r.entropy_slack),
            if r.sandwich { "pass" } else { "fail" }.to_string(),
            fmt_f64(r.max_coupling_error),
        ]
    });
    write_csv(
        &path,
        &metadata_line(ExperimentKind::SinkhornCheck.name(), config)?,
        &SINKHORN_CHECK_COLUMNS,
        csv_rows,
    )?;
    Ok((path, rows))
}

/// `{"error": <kind>, "message": <text>}` for the CLI's failure line.
pub fn error_line(e: &Error) -> String {
    let message = match e {
        Error::Diverged { iteration, last_good } => format!(
            "training diverged at generator iteration {iteration}; last good checkpoint is {}",
            checkpoint_name(last_good.iterations)
        ),
        other => other.to_string(),
    };
    serde_json::json!({ "error": e.kind(), "message": message }).to_string()
}
