//! Couplings and latent posteriors recovered from trained discriminators.

use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{invalid, Error, Result};
use crate::gan::EntropicGanModel;
use crate::grad::{Tape, Var};
use crate::nets::Mlp;
use crate::ot::logsumexp;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// How the latent samples drawn from the prior are weighted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `u_i = φ(x_i)·exp(v_i/λ)`, prior density included.
    Prior,
    /// `u_i = exp(v_i/λ)`: self-normalized importance weights for the
    /// density `φ(x) exp(v/λ) / Z` under prior sampling.
    Snis,
    /// A single latent carrying all the mass.
    Impulse,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(WeightMode::Prior),
            "snis" => Ok(WeightMode::Snis),
            "impulse" => Ok(WeightMode::Impulse),
            other => Err(invalid(format!("unknown weight mode `{other}`"))),
        }
    }
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Prior => "prior",
            WeightMode::Snis => "snis",
            WeightMode::Impulse => "impulse",
        }
    }
}

/// `log φ(x)` for the standard normal on `ℝʳ`.
pub fn log_standard_normal(x: &[f64]) -> f64 {
    let sq: f64 = x.iter().map(|v| v * v).sum();
    -0.5 * sq - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Weighted latent samples for one test point.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalLatentPosterior {
    pub y: Vec<f64>,
    /// `N × r`
    pub latents: Tensor,
    /// `G(x_i)`, `N × d`
    pub generated: Tensor,
    /// `v_i = v(y, G(x_i))`
    pub violations: Vec<f64>,
    /// `log u_i`
    pub log_unnormalized: Vec<f64>,
    /// `p_i`, summing to one
    pub weights: Vec<f64>,
    /// `log Ẑ = log (1/N) Σ exp(v_i/λ)`
    pub log_normalizer: f64,
    pub lambda: f64,
    pub mode: WeightMode,
}

impl ConditionalLatentPosterior {
    /// Builds the posterior from given latents, their images and violations.
    pub fn from_violations(
        y: Vec<f64>,
        latents: Tensor,
        generated: Tensor,
        violations: Vec<f64>,
        lambda: f64,
        mode: WeightMode,
    ) -> Result<Self> {
        let n = latents.rows();
        if n == 0 || violations.len() != n || generated.rows() != n {
            return Err(invalid("posterior needs N ≥ 1 latents with one violation and image each"));
        }
        if !(lambda > 0.0) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        let log_unnormalized: Vec<f64> = (0..n)
            .map(|i| {
                let scaled = violations[i] / lambda;
                match mode {
                    WeightMode::Prior => log_standard_normal(latents.row(i)) + scaled,
                    WeightMode::Snis | WeightMode::Impulse => scaled,
                }
            })
            .collect();
        if log_unnormalized.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NumericOverflow {
                node: 0,
                op: "posterior weights",
            });
        }
        let lse = logsumexp(log_unnormalized.iter().copied());
        if lse == f64::NEG_INFINITY {
            return Err(Error::WeightUnderflow);
        }
        let mut weights: Vec<f64> = log_unnormalized.iter().map(|l| (l - lse).exp()).collect();
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        let log_normalizer = logsumexp(violations.iter().map(|v| v / lambda)) - (n as f64).ln();
        Ok(Self {
            y,
            latents,
            generated,
            violations,
            log_unnormalized,
            weights,
            log_normalizer,
            lambda,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn latent(&self, i: usize) -> &[f64] {
        self.latents.row(i)
    }

    /// `Σ p_i f(x_i)` with its delta-method standard error.
    pub fn expectation(&self, f: impl Fn(usize) -> f64) -> (f64, f64) {
        let vals: Vec<f64> = (0..self.len()).map(f).collect();
        let mean: f64 = vals.iter().zip(&self.weights).map(|(v, p)| p * v).sum();
        let var: f64 = vals.iter().zip(&self.weights).map(|(v, p)| p * p * (v - mean).powi(2)).sum();
        (mean, var.sqrt())
    }

    /// `1 / Σ p_i²`
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|p| p * p).sum::<f64>()
    }

    /// Delta-method variance of `log Ẑ`.
    pub fn log_normalizer_variance(&self) -> f64 {
        let n = self.len() as f64;
        let lse = logsumexp(self.violations.iter().map(|v| v / self.lambda));
        let sum_sq: f64 = self.violations.iter().map(|v| (2.0 * (v / self.lambda - lse)).exp()).sum();
        (n * sum_sq - 1.0).max(0.0) / (n - 1.0).max(1.0)
    }
}

/// `P_Y(y_i) P_Ŷ(ŷ_j) exp(v_ij/λ)` from a matrix of violations.
pub fn joint_coupling_density(i: usize, j: usize, a: &[f64], b: &[f64], violations: &Tensor, lambda: f64) -> f64 {
    a[i] * b[j] * (violations.at(i, j) / lambda).exp()
}

/// Draws `n` latents from the prior and weights them by `exp(v/λ)`
/// (times `φ(x)` in [`WeightMode::Prior`]).
pub fn latent_posterior(
    y_test: &[f64],
    model: &EntropicGanModel,
    n: usize,
    seed: u64,
    mode: WeightMode,
) -> Result<ConditionalLatentPosterior> {
    if n == 0 {
        return Err(invalid("at least one latent sample is needed"));
    }
    if y_test.len() != model.data_dim {
        return Err(Error::ShapeMismatch {
            context: "test point".into(),
            expected: vec![model.data_dim],
            actual: vec![y_test.len()],
        });
    }
    let mut rng = SeededRng::new(seed);
    let latents = Tensor::matrix(n, model.latent_dim, rng.normals(n * model.latent_dim))?;
    let generated = model.generate(&latents)?;
    let violations = model.violations_against(y_test, &generated)?;
    ConditionalLatentPosterior::from_violations(y_test.to_vec(), latents, generated, violations, model.lambda, mode)
}

/// `y_i − ∇D(y_i)` for a scalar field recorded by `record` on an `n × d`
/// input.
pub fn w2_pushforward_with(
    y: &SampleBatch,
    record: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<SampleBatch> {
    let mut tape = Tape::new();
    let yv = tape.input(y.points().shape());
    let field = record(&mut tape, yv)?;
    if tape.shape(field).iter().product::<usize>() != y.len() {
        return Err(invalid("the field must give one value per row"));
    }
    tape.sum(field, None)?;
    tape.forward(&[y.points()])?;
    let grad = tape.backward()?.swap_remove(0);
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient("discriminator input".into()));
    }
    let out: Vec<f64> = y.points().data().iter().zip(grad.data()).map(|(a, g)| a - g).collect();
    SampleBatch::new(Tensor::matrix(y.len(), y.dim(), out)?)
}

/// `y_i − ∇D(y_i)` for a discriminator network.
pub fn w2_pushforward(y: &SampleBatch, discriminator: &Mlp) -> Result<SampleBatch> {
    if discriminator.spec.output_width() != 1 || discriminator.spec.input_width() != y.dim() {
        return Err(invalid("discriminator must map the data space to R"));
    }
    let params = discriminator.params.tensors();
    let mut tape = Tape::new();
    let yv = tape.input(y.points().shape());
    let pv = discriminator.spec.declare_params(&mut tape);
    let out = discriminator.spec.record(&mut tape, yv, &pv)?;
    tape.sum(out, None)?;
    let mut inputs = vec![y.points()];
    inputs.extend(params);
    tape.forward(&inputs)?;
    let grad = tape.backward()?.swap_remove(0);
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient("discriminator input".into()));
    }
    let out: Vec<f64> = y.points().data().iter().zip(grad.data()).map(|(a, g)| a - g).collect();
    SampleBatch::new(Tensor::matrix(y.len(), y.dim(), out)?)
}

/// Draws `k` prior latents and keeps the one whose image is closest to
/// `y_test`; ties go to the smaller latent norm, then the smaller index.
pub fn nearest_latent_coupling(
    y_test: &[f64],
    model: &EntropicGanModel,
    k: usize,
    seed: u64,
) -> Result<(Vec<f64>, ConditionalLatentPosterior)> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut rng = SeededRng::new(seed);
    let latents = Tensor::matrix(k, model.latent_dim, rng.normals(k * model.latent_dim))?;
    let generated = model.generate(&latents)?;
    let key = |i: usize| {
        let dist = model.loss.eval(y_test, generated.row(i));
        let norm: f64 = latents.row(i).iter().map(|v| v * v).sum();
        (dist, norm, i)
    };
    let best = (0..k)
        .map(key)
        .min_by(|a, b| a.partial_cmp(b).expect("finite losses"))
        .expect("k ≥ 1")
        .2;
    let x = latents.row(best).to_vec();
    let image = Tensor::matrix(1, model.data_dim, generated.row(best).to_vec())?;
    let v = model.violations_against(y_test, &image)?;
    let post = ConditionalLatentPosterior::from_violations(
        y_test.to_vec(),
        Tensor::matrix(1, model.latent_dim, x.clone())?,
        image,
        v,
        model.lambda,
        WeightMode::Impulse,
    )?;
    Ok((x, post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::TrainConfig;
    use crate::nets::{Activation, Layer, MlpParams, MlpSpec};
    use crate::ot::{cost_matrix, sinkhorn, CostMatrix, LossKind, SinkhornOptions};

    /// Scalar linear generator `x ↦ g·x` with zero discriminators.
    fn linear_model(r: usize, d: usize, g: &[f64], lambda: f64) -> EntropicGanModel {
        let spec = MlpSpec::uniform(vec![r, d], Activation::Identity).unwrap();
        let mut cfg = TrainConfig::new(spec.clone());
        cfg.lambda = lambda;
        cfg.discriminator_hidden = vec![3];
        let mut m = EntropicGanModel::init(&cfg, d, 1).unwrap();
        m.generator.params.layers[0] = Layer {
            weight: Tensor::matrix(d, r, g.to_vec()).unwrap(),
            bias: Tensor::zeros(&[d]),
        };
        m.d1.params = MlpParams::zeros(&m.d1.spec);
        m.d2.params = MlpParams::zeros(&m.d2.spec);
        m
    }

    #[test]
    fn constant_violations_give_uniform_weights() {
        let m = linear_model(2, 2, &[0.0; 4], 0.5);
        for mode in [WeightMode::Snis, WeightMode::Prior] {
            let p = latent_posterior(&[0.4, -1.0], &m, 50, 3, mode).unwrap();
            let s: f64 = p.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            if mode == WeightMode::Snis {
                assert!(p.weights.iter().all(|w| (w - 0.02).abs() < 1e-14));
            }
        }
        let p = latent_posterior(&[0.4, -1.0], &m, 1, 3, WeightMode::Prior).unwrap();
        assert_eq!(p.weights, vec![1.0]);
    }

    #[test]
    fn weights_invariant_to_violation_shift() {
        let x = Tensor::matrix(3, 1, vec![0.1, -0.5, 2.0]).unwrap();
        let g = x.clone();
        let v = vec![-3.0, 1.0, 0.5];
        let a = ConditionalLatentPosterior::from_violations(vec![0.0], x.clone(), g.clone(), v.clone(), 0.1, WeightMode::Prior).unwrap();
        let shifted = v.iter().map(|x| x + 1e4).collect();
        let b = ConditionalLatentPosterior::from_violations(vec![0.0], x, g, shifted, 0.1, WeightMode::Prior).unwrap();
        for (p, q) in a.weights.iter().zip(&b.weights) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn underflow_is_reported() {
        let x = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let r = ConditionalLatentPosterior::from_violations(vec![0.0], x.clone(), x, vec![f64::NEG_INFINITY], 0.1, WeightMode::Snis);
        assert!(matches!(r, Err(Error::WeightUnderflow)));
    }

    #[test]
    fn snis_mean_matches_gaussian_posterior() {
        let (g, lambda, y) = (1.3, 0.5, 0.8);
        let m = linear_model(1, 1, &[g], lambda);
        let p = latent_posterior(&[y], &m, 10_000, 17, WeightMode::Snis).unwrap();
        let (mean, se) = p.expectation(|i| p.latent(i)[0]);
        let want = g * y / (g * g + lambda);
        assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want} (se {se})");
    }

    #[test]
    fn coupling_density_reproduces_sinkhorn() {
        let y = SampleBatch::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.5], vec![-1.0, 0.2]]).unwrap();
        let yh = SampleBatch::from_rows(&[vec![0.3, 0.3], vec![0.0, -1.0]]).unwrap();
        let c = cost_matrix(LossKind::HalfSquaredL2, &y, &yh).unwrap();
        let (a, b) = (vec![0.2, 0.3, 0.5], vec![0.6, 0.4]);
        let s = sinkhorn(&c, &a, &b, 0.3, SinkhornOptions::default()).unwrap();
        let v: Vec<f64> = (0..3)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| s.potentials.violation(&c, i, j))
            .collect();
        let v = Tensor::matrix(3, 2, v).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let p = joint_coupling_density(i, j, &a, &b, &v, 0.3);
                assert!((p - s.coupling.at(i, j)).abs() < 1e-8);
            }
        }
        let zero = Tensor::zeros(&[3, 2]);
        assert_eq!(joint_coupling_density(1, 0, &a, &b, &zero, 0.3), 0.3 * 0.6);
        let half = CostMatrix(Tensor::new(vec![1, 1], vec![0.3 * 2f64.ln()]).unwrap());
        let u = [1.0 / 3.0; 3];
        let w = [0.5, 0.5];
        assert!((joint_coupling_density(0, 0, &u, &w, &half.0, 0.3) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_of_quadratics() {
        let y = SampleBatch::from_rows(&[vec![0.5, -1.0], vec![2.0, 3.0]]).unwrap();
        let c = [0.7, -0.2];
        let out = w2_pushforward_with(&y, |t, v| {
            let sq = t.square(v);
            let half = t.sum(sq, Some(1))?;
            let cc = t.constant(Tensor::matrix(1, 2, c.to_vec())?);
            let lin = t.affine(v, cc, None)?;
            t.lincomb(&[(half, 0.5), (lin, -1.0)], 0.0)
        })
        .unwrap();
        for i in 0..2 {
            assert!((out.point(i)[0] - c[0]).abs() < 1e-15 && (out.point(i)[1] - c[1]).abs() < 1e-15);
        }
        let alpha = 0.3;
        let out = w2_pushforward_with(&y, |t, v| {
            let sq = t.square(v);
            let s = t.sum(sq, Some(1))?;
            Ok(t.scale(s, alpha / 2.0))
        })
        .unwrap();
        for (o, i) in out.points().data().iter().zip(y.points().data()) {
            assert!((o - (1.0 - alpha) * i).abs() < 1e-15);
        }
        let spec = MlpSpec::discriminator(2);
        let zero = Mlp::new(spec.clone(), MlpParams::zeros(&spec)).unwrap();
        assert_eq!(w2_pushforward(&y, &zero).unwrap(), y);
    }

    #[test]
    fn nearest_latent_selection() {
        let m = linear_model(2, 2, &[1.0, 0.0, 0.0, 1.0], 0.1);
        let (x1, p1) = nearest_latent_coupling(&[5.0, 5.0], &m, 1, 4).unwrap();
        let mut rng = SeededRng::new(4);
        assert_eq!(x1, rng.normals(2));
        assert_eq!(p1.weights, vec![1.0]);

        // G = identity: a candidate's own image is selected exactly
        let mut rng = SeededRng::new(8);
        let cands = rng.normals(2 * 20);
        let target = cands[2 * 7..2 * 8].to_vec();
        let (x, _) = nearest_latent_coupling(&target, &m, 20, 8).unwrap();
        assert_eq!(x, target);

        // brute-force scan
        let y = [0.3, -0.4];
        let (x, _) = nearest_latent_coupling(&y, &m, 50, 9).unwrap();
        let mut rng = SeededRng::new(9);
        let c = rng.normals(100);
        let best = (0..50)
            .min_by(|&a, &b| {
                let da = LossKind::HalfSquaredL2.eval(&y, &c[2 * a..2 * a + 2]);
                let db = LossKind::HalfSquaredL2.eval(&y, &c[2 * b..2 * b + 2]);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!(x, c[2 * best..2 * best + 2].to_vec());
    }
}
