//! Surrogate log-likelihood lower bounds for samples under a trained model.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{invalid, Error, Result};
use crate::gan::EntropicGanModel;
use crate::inference::{latent_posterior, log_standard_normal, ConditionalLatentPosterior, WeightMode};
use crate::rng::derive_seed;

/// Estimator of the coupling entropy term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    /// `−Σ p_i log p_i`, the discrete entropy of the weights.
    Discrete,
    /// `−Σ p_i [log φ(x_i) + v_i/λ − log Ẑ]`, the differential entropy of
    /// the continuous posterior.
    Differential,
}

impl std::str::FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(EntropyMode::Discrete),
            "differential" => Ok(EntropyMode::Differential),
            other => Err(invalid(format!("unknown entropy mode `{other}`"))),
        }
    }
}

impl EntropyMode {
    pub fn name(self) -> &'static str {
        match self {
            EntropyMode::Discrete => "discrete",
            EntropyMode::Differential => "differential",
        }
    }
}

/// Normalizing constant added to every surrogate total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantMode {
    /// No constant.
    None,
    /// `−log m − d log(2πλ)/2 − r/2 − log(2π)/2`.
    Standard,
    /// `−log m − (d/2) log(2πλ) − r/2 − (r/2) log(2π)`.
    Dimensional,
    /// `−(d/2) log(2πλ) − (r/2) log(2π)`: the Gaussian observation and prior
    /// normalizers, which turns the differential-mode total into a lower
    /// bound on `log f_Y(y)` for the squared loss.
    PerSample,
}

impl std::str::FromStr for ConstantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "no-constant" => Ok(ConstantMode::None),
            "standard" => Ok(ConstantMode::Standard),
            "dimensional" => Ok(ConstantMode::Dimensional),
            "per-sample" => Ok(ConstantMode::PerSample),
            other => Err(invalid(format!("unknown constant mode `{other}`"))),
        }
    }
}

impl ConstantMode {
    pub fn name(self) -> &'static str {
        match self {
            ConstantMode::None => "none",
            ConstantMode::Standard => "standard",
            ConstantMode::Dimensional => "dimensional",
            ConstantMode::PerSample => "per-sample",
        }
    }
}

/// The additive constant for data dimension `d`, latent dimension `r`,
/// `m` training samples and regularization `λ`.
pub fn likelihood_constant(d: usize, r: usize, m: usize, lambda: f64, mode: ConstantMode) -> f64 {
    let (d, r, m) = (d as f64, r as f64, m as f64);
    let two_pi = 2.0 * PI;
    match mode {
        ConstantMode::None => 0.0,
        ConstantMode::Standard => -m.ln() - d * (two_pi * lambda).ln() / 2.0 - r / 2.0 - two_pi.ln() / 2.0,
        ConstantMode::Dimensional => -m.ln() - d / 2.0 * (two_pi * lambda).ln() - r / 2.0 - r / 2.0 * two_pi.ln(),
        ConstantMode::PerSample => -d / 2.0 * (two_pi * lambda).ln() - r / 2.0 * two_pi.ln(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodOptions {
    pub samples: usize,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub entropy_mode: EntropyMode,
    pub constant_mode: ConstantMode,
}

impl LikelihoodOptions {
    /// Prior-weighted samples, discrete weight entropy and the standard
    /// constant.
    pub fn discrete(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            weight_mode: WeightMode::Prior,
            entropy_mode: EntropyMode::Discrete,
            constant_mode: ConstantMode::Standard,
        }
    }

    /// Self-normalized weights with the differential entropy: a consistent
    /// estimate of the variational lower bound.
    pub fn differential(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            weight_mode: WeightMode::Snis,
            entropy_mode: EntropyMode::Differential,
            constant_mode: ConstantMode::PerSample,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateLikelihoodReport {
    /// `−(1/λ) Σ p_i ℓ(y, G(x_i))`
    pub cost: f64,
    pub entropy: f64,
    /// `−Σ p_i ‖x_i‖²/2`
    pub prior: f64,
    pub constant: f64,
    pub total: f64,
    pub std_error: f64,
    pub samples: usize,
    pub weight_mode: WeightMode,
    pub entropy_mode: EntropyMode,
    pub constant_mode: ConstantMode,
}

/// Evaluates the bound terms on an existing posterior sample.
pub fn report_from_posterior(
    post: &ConditionalLatentPosterior,
    loss: crate::ot::LossKind,
    entropy_mode: EntropyMode,
    constant: f64,
    constant_mode: ConstantMode,
) -> Result<SurrogateLikelihoodReport> {
    let lambda = post.lambda;
    let n = post.len();
    let cost_i: Vec<f64> = (0..n).map(|i| -loss.eval(&post.y, post.generated.row(i)) / lambda).collect();
    let prior_i: Vec<f64> = (0..n)
        .map(|i| -0.5 * post.latent(i).iter().map(|v| v * v).sum::<f64>())
        .collect();
    let entropy_i: Vec<f64> = match entropy_mode {
        EntropyMode::Discrete => post.weights.iter().map(|&p| if p > 0.0 { -p.ln() } else { 0.0 }).collect(),
        EntropyMode::Differential => (0..n)
            .map(|i| -(log_standard_normal(post.latent(i)) + post.violations[i] / lambda - post.log_normalizer))
            .collect(),
    };
    let wsum = |v: &[f64]| v.iter().zip(&post.weights).map(|(x, p)| p * x).sum::<f64>();
    let (cost, prior, entropy) = (wsum(&cost_i), wsum(&prior_i), wsum(&entropy_i));
    let total = cost + entropy + prior + constant;

    let per_sample: Vec<f64> = (0..n).map(|i| cost_i[i] + prior_i[i] + entropy_i[i]).collect();
    let mean = cost + prior + entropy;
    let mut var: f64 = per_sample
        .iter()
        .zip(&post.weights)
        .map(|(f, p)| p * p * (f - mean).powi(2))
        .sum();
    if entropy_mode == EntropyMode::Differential {
        var += post.log_normalizer_variance();
    }
    if !total.is_finite() {
        return Err(Error::NumericOverflow {
            node: 0,
            op: "surrogate likelihood",
        });
    }
    Ok(SurrogateLikelihoodReport {
        cost,
        entropy,
        prior,
        constant,
        total,
        std_error: var.sqrt(),
        samples: n,
        weight_mode: post.mode,
        entropy_mode,
        constant_mode,
    })
}

/// Surrogate log-likelihood of one test point.
pub fn surrogate_log_likelihood(
    y_test: &[f64],
    model: &EntropicGanModel,
    options: &LikelihoodOptions,
) -> Result<SurrogateLikelihoodReport> {
    if options.samples < 2 && options.entropy_mode == EntropyMode::Discrete {
        return Err(invalid("entropy estimation needs at least two latent samples"));
    }
    let post = latent_posterior(y_test, model, options.samples, options.seed, options.weight_mode)?;
    let constant = likelihood_constant(
        model.data_dim,
        model.latent_dim,
        model.train_size.max(1),
        model.lambda,
        options.constant_mode,
    );
    report_from_posterior(&post, model.loss, options.entropy_mode, constant, options.constant_mode)
}

/// Per-sample reports with per-sample seeds `derive_seed(seed, i)`.
pub fn per_sample_likelihoods(
    data: &SampleBatch,
    model: &EntropicGanModel,
    options: &LikelihoodOptions,
) -> Result<Vec<SurrogateLikelihoodReport>> {
    (0..data.len())
        .map(|i| {
            let opts = LikelihoodOptions {
                seed: derive_seed(options.seed, i as u64),
                ..*options
            };
            surrogate_log_likelihood(data.point(i), model, &opts)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AverageBound {
    pub mean: f64,
    /// Pooled standard error of the mean over samples' Monte-Carlo errors.
    pub std_error: f64,
    pub reports: Vec<SurrogateLikelihoodReport>,
}

/// Mean surrogate total over a dataset.
pub fn average_bound(
    data: &SampleBatch,
    model: &EntropicGanModel,
    options: &LikelihoodOptions,
) -> Result<AverageBound> {
    if data.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    let reports = per_sample_likelihoods(data, model, options)?;
    let n = reports.len() as f64;
    let mean = reports.iter().map(|r| r.total).sum::<f64>() / n;
    let std_error = reports.iter().map(|r| r.std_error.powi(2)).sum::<f64>().sqrt() / n;
    Ok(AverageBound { mean, std_error, reports })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Counts `values` into equal-width bins on `range`; values outside the
    /// range go to the nearest end bin.
    pub fn from_values(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("at least one bin is needed"));
        }
        let (lo, hi) = range;
        if !(hi > lo) {
            return Err(invalid(format!("empty histogram range [{lo}, {hi}]")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = ((v - lo) / width).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
            counts[k] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.counts.iter().enumerate().map(|(k, &c)| (self.edges[k], self.edges[k + 1], c))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram of per-sample surrogate totals, with the totals themselves.
pub fn likelihood_histogram(
    samples: &SampleBatch,
    model: &EntropicGanModel,
    bins: usize,
    range: (f64, f64),
    options: &LikelihoodOptions,
) -> Result<(Histogram, Vec<f64>)> {
    let totals: Vec<f64> = per_sample_likelihoods(samples, model, options)?
        .iter()
        .map(|r| r.total)
        .collect();
    Ok((Histogram::from_values(&totals, bins, range)?, totals))
}

/// Median of a nonempty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
