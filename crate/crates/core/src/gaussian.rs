//! Linear-Gaussian model `y = G·x + c + √λ·ε` with `x, ε ~ N(0, I)`, where
//! posteriors and marginal likelihoods are available in closed form.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::batch::SampleBatch;
use crate::error::{invalid, Error, Result};
use crate::inference::{log_standard_normal, ConditionalLatentPosterior, WeightMode};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Diagonal jitter tried when a covariance fails to factor.
pub const JITTER: f64 = 1e-12;

/// Minimum node count of the Simpson quadratures.
pub const QUADRATURE_NODES: usize = 4097;

fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    Tensor::matrix(m.nrows(), m.ncols(), data).expect("matrix shape")
}

/// Cholesky factor, retrying once with `JITTER` on the diagonal.
fn factor(m: &DMatrix<f64>, what: &str) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch, false));
    }
    let n = m.nrows();
    let jittered = m + DMatrix::identity(n, n) * JITTER;
    match jittered.cholesky() {
        Some(ch) => Ok((ch, true)),
        None => Err(Error::NotPositiveDefinite(what.into())),
    }
}

fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

#[derive(Clone, Debug)]
pub struct LinearGaussianOracle {
    g: DMatrix<f64>,
    offset: DVector<f64>,
    lambda: f64,
    /// `R = Gᵀ(GGᵀ + λI)⁻¹`, `r × d`
    r_mat: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    posterior_chol: Option<Cholesky<f64, Dyn>>,
    marginal_chol: Cholesky<f64, Dyn>,
    log_det_marginal: f64,
    jitter_used: bool,
}

impl LinearGaussianOracle {
    /// Oracle for `G` (`d × r`) with zero offset.
    pub fn new(g: &Tensor, lambda: f64) -> Result<Self> {
        Self::with_offset(g, &vec![0.0; g.rows()], lambda)
    }

    pub fn with_offset(g: &Tensor, offset: &[f64], lambda: f64) -> Result<Self> {
        if g.rank() != 2 || g.rows() == 0 || g.cols() == 0 {
            return Err(invalid("G must be a nonempty matrix"));
        }
        if !g.is_finite() || offset.iter().any(|v| !v.is_finite()) {
            return Err(invalid("G and the offset must be finite"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        if offset.len() != g.rows() {
            return Err(Error::ShapeMismatch {
                context: "oracle offset".into(),
                expected: vec![g.rows()],
                actual: vec![offset.len()],
            });
        }
        let gm = to_dmatrix(g);
        let (d, r) = (gm.nrows(), gm.ncols());
        let marginal = &gm * gm.transpose() + DMatrix::identity(d, d) * lambda;
        let (marginal_chol, jitter_m) = factor(&marginal, "marginal covariance GGᵀ + λI")?;
        // R = Gᵀ M⁻¹, computed as (M⁻¹ G)ᵀ since M is symmetric
        let r_mat = marginal_chol.solve(&gm).transpose();
        let mut posterior_cov = DMatrix::identity(r, r) - &r_mat * &gm;
        posterior_cov = (&posterior_cov + posterior_cov.transpose()) * 0.5;
        let (posterior_chol, jitter_p) = match factor(&posterior_cov, "posterior covariance") {
            Ok((ch, j)) => (Some(ch), j),
            Err(_) => (None, false),
        };
        let jitter_used = jitter_m || jitter_p;
        if jitter_used {
            eprintln!("warning: added {JITTER:e} to a covariance diagonal to factor it");
        }
        let log_det_marginal = log_det(&marginal_chol);
        Ok(Self {
            g: gm,
            offset: DVector::from_column_slice(offset),
            lambda,
            r_mat,
            posterior_cov,
            posterior_chol,
            marginal_chol,
            log_det_marginal,
            jitter_used,
        })
    }

    /// `G` with i.i.d. `N(0, 1/r)` entries.
    pub fn random(d: usize, r: usize, lambda: f64, seed: u64) -> Result<Self> {
        if d == 0 || r == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        let mut rng = SeededRng::new(seed);
        let scale = 1.0 / (r as f64).sqrt();
        let g = Tensor::matrix(d, r, rng.normals(d * r).into_iter().map(|v| v * scale).collect())?;
        Self::new(&g, lambda)
    }

    pub fn data_dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn g(&self) -> Tensor {
        to_tensor(&self.g)
    }

    pub fn offset(&self) -> &[f64] {
        self.offset.as_slice()
    }

    pub fn r_matrix(&self) -> Tensor {
        to_tensor(&self.r_mat)
    }

    /// `GGᵀ + λI`
    pub fn marginal_covariance(&self) -> Tensor {
        let d = self.data_dim();
        to_tensor(&(&self.g * self.g.transpose() + DMatrix::identity(d, d) * self.lambda))
    }

    /// `I − RG`
    pub fn posterior_covariance(&self) -> Tensor {
        to_tensor(&self.posterior_cov)
    }

    /// Whether any factorization needed the diagonal jitter.
    pub fn jitter_used(&self) -> bool {
        self.jitter_used
    }

    /// `log det(GGᵀ + λI)` from the `d × d` factorization.
    pub fn log_det_marginal(&self) -> f64 {
        self.log_det_marginal
    }

    /// `(d − r) log λ + log det(λI + GᵀG)`, the same determinant through
    /// the `r × r` matrix.
    pub fn log_det_marginal_woodbury(&self) -> Result<f64> {
        let (d, r) = (self.data_dim() as f64, self.latent_dim());
        let small = self.g.transpose() * &self.g + DMatrix::identity(r, r) * self.lambda;
        let (ch, _) = factor(&small, "λI + GᵀG")?;
        Ok((d - r as f64) * self.lambda.ln() + log_det(&ch))
    }

    /// `n` draws; each row uses `r` latent normals followed by `d` noise
    /// normals from one stream.
    pub fn sample_data(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        if n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        let (d, r) = (self.data_dim(), self.latent_dim());
        let sd = self.lambda.sqrt();
        let mut rng = SeededRng::new(seed);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let x = DVector::from_vec(rng.normals(r));
            let eps = rng.normals(d);
            let mean = &self.g * x + &self.offset;
            data.extend(mean.iter().zip(&eps).map(|(m, e)| m + sd * e));
        }
        SampleBatch::new(Tensor::matrix(n, d, data)?)
    }

    fn check_y(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.data_dim() {
            return Err(Error::ShapeMismatch {
                context: "oracle observation".into(),
                expected: vec![self.data_dim()],
                actual: vec![y.len()],
            });
        }
        Ok(DVector::from_column_slice(y) - &self.offset)
    }

    /// `(R(y − c), I − RG)`
    pub fn posterior(&self, y: &[f64]) -> Result<(Vec<f64>, Tensor)> {
        let centered = self.check_y(y)?;
        let mean = &self.r_mat * centered;
        Ok((mean.as_slice().to_vec(), self.posterior_covariance()))
    }

    /// `log q(x | y)` under the exact posterior.
    pub fn posterior_log_density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ch = self
            .posterior_chol
            .as_ref()
            .ok_or_else(|| Error::DegeneratePosterior("posterior covariance is singular".into()))?;
        if x.len() != self.latent_dim() {
            return Err(Error::ShapeMismatch {
                context: "latent point".into(),
                expected: vec![self.latent_dim()],
                actual: vec![x.len()],
            });
        }
        let (mean, _) = self.posterior(y)?;
        let diff = DVector::from_column_slice(x) - DVector::from_vec(mean);
        let quad = diff.dot(&ch.solve(&diff));
        let r = self.latent_dim() as f64;
        Ok(-0.5 * quad - 0.5 * log_det(ch) - 0.5 * r * (2.0 * PI).ln())
    }

    /// `log N(y; c, GGᵀ + λI)`
    pub fn exact_log_likelihood(&self, y: &[f64]) -> Result<f64> {
        let centered = self.check_y(y)?;
        let quad = centered.dot(&self.marginal_chol.solve(&centered));
        let d = self.data_dim() as f64;
        Ok(-0.5 * quad - 0.5 * self.log_det_marginal - 0.5 * d * (2.0 * PI).ln())
    }

    /// Mean exact log-likelihood over a batch.
    pub fn mean_exact_log_likelihood(&self, data: &SampleBatch) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..data.len() {
            total += self.exact_log_likelihood(data.point(i))?;
        }
        Ok(total / data.len() as f64)
    }

    /// Self-normalized estimate of `KL(P*(·|y) ‖ q(·|y))`, where `P*` is the
    /// coupling-induced latent posterior `∝ φ(x) exp(v/λ)`.
    pub fn approximation_gap(&self, y: &[f64], post: &ConditionalLatentPosterior) -> Result<GapEstimate> {
        if post.mode != WeightMode::Snis {
            return Err(invalid("the approximation gap needs snis posterior weights"));
        }
        if post.latents.cols() != self.latent_dim() {
            return Err(Error::ShapeMismatch {
                context: "posterior latents".into(),
                expected: vec![self.latent_dim()],
                actual: vec![post.latents.cols()],
            });
        }
        let mut h = Vec::with_capacity(post.len());
        for i in 0..post.len() {
            let x = post.latent(i);
            let log_q = self.posterior_log_density(x, y)?;
            if log_q == f64::NEG_INFINITY {
                return Err(Error::DegeneratePosterior(format!("q(x_{i}) = 0")));
            }
            h.push(log_standard_normal(x) + post.violations[i] / post.lambda - post.log_normalizer - log_q);
        }
        let kl: f64 = h.iter().zip(&post.weights).map(|(h, p)| p * h).sum();
        let var: f64 = h.iter().zip(&post.weights).map(|(h, p)| p * p * (h - kl).powi(2)).sum::<f64>()
            + post.log_normalizer_variance();
        Ok(GapEstimate {
            kl,
            std_error: var.sqrt(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapEstimate {
    pub kl: f64,
    pub std_error: f64,
}

/// Composite Simpson rule on `[lo, hi]` with `nodes` points (rounded up to
/// an odd count).
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> f64 {
    let nodes = if nodes % 2 == 0 { nodes + 1 } else { nodes.max(3) };
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut sum = f(lo) + f(hi);
    for k in 1..nodes - 1 {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + k as f64 * h);
    }
    sum * h / 3.0
}

/// Terms of the one-dimensional bound, each evaluated by quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureBound {
    /// `E_P[log f(y|x) + log φ(x) − log P(x)]`
    pub elbo: f64,
    /// `KL(P ‖ q(·|y))`
    pub kl: f64,
    /// `log ∫ f(y|x) φ(x) dx`
    pub log_evidence: f64,
}

impl LinearGaussianOracle {
    fn scalar_model(&self) -> Result<(f64, f64)> {
        if self.data_dim() != 1 || self.latent_dim() != 1 {
            return Err(invalid("quadrature oracles are one-dimensional"));
        }
        Ok((self.g[(0, 0)], self.offset[0]))
    }

    fn log_joint(&self, x: f64, y: f64) -> f64 {
        let (g, c) = (self.g[(0, 0)], self.offset[0]);
        let resid = y - g * x - c;
        -0.5 * resid * resid / self.lambda - 0.5 * (2.0 * PI * self.lambda).ln() - 0.5 * x * x
            - 0.5 * (2.0 * PI).ln()
    }

    /// `log f_Y(y)` by integrating the joint density over the latent.
    pub fn quadrature_log_likelihood(&self, y: f64) -> Result<f64> {
        self.scalar_model()?;
        Ok(simpson(|x| self.log_joint(x, y).exp(), -8.0, 8.0, QUADRATURE_NODES).ln())
    }

    /// Posterior mean and variance from the Bayes rule by quadrature.
    pub fn quadrature_posterior_moments(&self, y: f64) -> Result<(f64, f64)> {
        let z = self.quadrature_log_likelihood(y)?.exp();
        let density = |x: f64| self.log_joint(x, y).exp() / z;
        let mean = simpson(|x| x * density(x), -8.0, 8.0, QUADRATURE_NODES);
        let var = simpson(|x| (x - mean).powi(2) * density(x), -8.0, 8.0, QUADRATURE_NODES);
        Ok((mean, var))
    }

    /// Bound terms for a latent posterior with unnormalized log-density
    /// `log_p`, normalized by quadrature on `[−12, 12]`.
    pub fn quadrature_bound(&self, y: f64, log_p: impl Fn(f64) -> f64) -> Result<QuadratureBound> {
        self.scalar_model()?;
        let (lo, hi, nodes) = (-12.0, 12.0, 2 * QUADRATURE_NODES - 1);
        let log_z = simpson(|x| log_p(x).exp(), lo, hi, nodes).ln();
        if !log_z.is_finite() {
            return Err(Error::DegeneratePosterior("latent density does not normalize".into()));
        }
        let p = |x: f64| (log_p(x) - log_z).exp();
        let log_evidence = simpson(|x| self.log_joint(x, y).exp(), lo, hi, nodes).ln();
        let term = |x: f64| {
            let px = p(x);
            if px == 0.0 {
                0.0
            } else {
                px * (self.log_joint(x, y) - (log_p(x) - log_z))
            }
        };
        let elbo = simpson(term, lo, hi, nodes);
        let kl = simpson(
            |x| {
                let px = p(x);
                if px == 0.0 {
                    0.0
                } else {
                    px * ((log_p(x) - log_z) - (self.log_joint(x, y) - log_evidence))
                }
            },
            lo,
            hi,
            nodes,
        );
        Ok(QuadratureBound { elbo, kl, log_evidence })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(g: f64, lambda: f64) -> LinearGaussianOracle {
        LinearGaussianOracle::new(&Tensor::matrix(1, 1, vec![g]).unwrap(), lambda).unwrap()
    }

    fn mat(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = SeededRng::new(seed);
        Tensor::matrix(rows, cols, rng.normals(rows * cols)).unwrap()
    }

    #[test]
    fn r_solves_the_normal_equation() {
        let o = LinearGaussianOracle::new(&mat(4, 3, 1), 0.1).unwrap();
        let r = to_dmatrix(&o.r_matrix());
        let lhs = r * to_dmatrix(&o.marginal_covariance());
        let g = to_dmatrix(&o.g());
        assert!((lhs - g.transpose()).amax() < 1e-10);
        let pc = to_dmatrix(&o.posterior_covariance());
        assert!((&pc - pc.transpose()).amax() < 1e-12);
        assert!(!o.jitter_used());
    }

    #[test]
    fn woodbury_log_det() {
        for (d, r) in [(2, 2), (5, 3), (3, 5), (10, 5)] {
            let o = LinearGaussianOracle::new(&mat(d, r, d as u64), 0.1).unwrap();
            assert_abs_diff_eq!(o.log_det_marginal(), o.log_det_marginal_woodbury().unwrap(), epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_generator_gives_prior() {
        let o = LinearGaussianOracle::new(&Tensor::zeros(&[2, 3]), 1.0).unwrap();
        let (mean, cov) = o.posterior(&[1.0, -2.0]).unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-15));
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((to_dmatrix(&cov) - id).amax() < 1e-15);
        let o = scalar(0.0, 1.0);
        assert_abs_diff_eq!(o.exact_log_likelihood(&[0.0]).unwrap(), -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(-0.5 * (2.0 * PI).ln(), -0.9189385332, epsilon = 1e-9);
    }

    #[test]
    fn small_lambda_inverts_g() {
        let g = Tensor::from_rows(&[vec![2.0, 1.0], vec![0.5, 3.0]]).unwrap();
        let o = LinearGaussianOracle::new(&g, 1e-8).unwrap();
        let y = [1.0, 2.0];
        let (mean, cov) = o.posterior(&y).unwrap();
        let inv = to_dmatrix(&g).try_inverse().unwrap() * DVector::from_column_slice(&y);
        assert!((DVector::from_vec(mean) - inv).amax() < 1e-4);
        assert!(cov.data().iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn scalar_closed_forms_match_quadrature() {
        for (g, lambda, y) in [(1.3, 0.1, 0.7), (0.4, 1.0, -1.5), (2.0, 0.5, 2.5)] {
            let o = scalar(g, lambda);
            let (mean, cov) = o.posterior(&[y]).unwrap();
            assert_abs_diff_eq!(mean[0], g * y / (g * g + lambda), epsilon = 1e-14);
            assert_abs_diff_eq!(cov.item(), lambda / (g * g + lambda), epsilon = 1e-14);
            let (qm, qv) = o.quadrature_posterior_moments(y).unwrap();
            assert_abs_diff_eq!(mean[0], qm, epsilon = 1e-6);
            assert_abs_diff_eq!(cov.item(), qv, epsilon = 1e-6);
            let s2 = g * g + lambda;
            let want = -0.5 * y * y / s2 - 0.5 * (2.0 * PI * s2).ln();
            let exact = o.exact_log_likelihood(&[y]).unwrap();
            assert_abs_diff_eq!(exact, want, epsilon = 1e-12);
            assert_abs_diff_eq!(exact, o.quadrature_log_likelihood(y).unwrap(), epsilon = 1e-6);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_has_model_covariance() {
        let o = LinearGaussianOracle::random(3, 2, 0.1, 4).unwrap();
        let a = o.sample_data(100_000, 9).unwrap();
        assert_eq!(a, o.sample_data(100_000, 9).unwrap());
        let n = a.len() as f64;
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for i in 0..a.len() {
            let p = DVector::from_column_slice(a.point(i));
            cov += &p * p.transpose() / n;
        }
        let want = to_dmatrix(&o.marginal_covariance());
        assert!((cov - &want).norm() / want.norm() < 0.05);
    }

    #[test]
    fn tiny_noise_reconstructs_identity_latents() {
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let o = LinearGaussianOracle::new(&id, 1e-10).unwrap();
        let y = o.sample_data(50, 3).unwrap();
        let mut rng = SeededRng::new(3);
        for i in 0..50 {
            let x = rng.normals(2);
            rng.normals(2);
            for k in 0..2 {
                assert!((y.point(i)[k] - x[k]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn quadrature_bound_identity_for_any_posterior() {
        let o = scalar(1.2, 0.3);
        let y = 0.8;
        let b = o.quadrature_bound(y, |x| -0.5 * (x - 0.3) * (x - 0.3) / 0.2).unwrap();
        assert_abs_diff_eq!(b.elbo + b.kl, o.exact_log_likelihood(&[y]).unwrap(), epsilon = 1e-9);
        assert!(b.kl > 0.0);
        let (m, v) = (1.2 * y / (1.44 + 0.3), 0.3 / (1.44 + 0.3));
        let exact = o.quadrature_bound(y, |x| -0.5 * (x - m) * (x - m) / v).unwrap();
        assert!(exact.kl.abs() < 1e-9);
    }

    fn planted(o: &LinearGaussianOracle, y: f64, n: usize, seed: u64, target: impl Fn(f64) -> f64) -> ConditionalLatentPosterior {
        let lambda = o.lambda();
        let mut rng = SeededRng::new(seed);
        let xs = rng.normals(n);
        let viol: Vec<f64> = xs.iter().map(|&x| lambda * (target(x) - log_standard_normal(&[x])) + 0.4).collect();
        let latents = Tensor::matrix(n, 1, xs).unwrap();
        ConditionalLatentPosterior::from_violations(vec![y], latents.clone(), latents, viol, lambda, WeightMode::Snis).unwrap()
    }

    #[test]
    fn planted_exact_posterior_has_zero_gap() {
        let o = scalar(1.1, 0.2);
        let y = 0.5;
        let post = planted(&o, y, 20_000, 1, |x| o.posterior_log_density(&[x], &[y]).unwrap());
        let gap = o.approximation_gap(&[y], &post).unwrap();
        assert!(gap.kl.abs() <= 3.0 * gap.std_error + 1e-12, "{gap:?}");
    }

    #[test]
    fn gap_matches_quadrature_kl() {
        let o = scalar(1.1, 0.2);
        let y = 0.5;
        let target = |x: f64| -0.5 * (x - 0.25) * (x - 0.25) / 0.2 - 0.5 * (2.0 * PI * 0.2).ln();
        let post = planted(&o, y, 1_000_000, 2, target);
        let gap = o.approximation_gap(&[y], &post).unwrap();
        let quad = o.quadrature_bound(y, target).unwrap();
        assert!((gap.kl - quad.kl).abs() < 1e-3, "{gap:?} vs {}", quad.kl);
    }

    #[test]
    fn gap_needs_snis_weights() {
        let o = scalar(1.0, 0.5);
        let mut post = planted(&o, 0.0, 10, 1, |x| -x * x);
        post.mode = WeightMode::Prior;
        assert!(o.approximation_gap(&[0.0], &post).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(LinearGaussianOracle::new(&Tensor::zeros(&[2, 2]), 0.0).is_err());
        let o = scalar(1.0, 1.0);
        assert!(o.exact_log_likelihood(&[1.0, 2.0]).is_err());
        assert!(o.sample_data(0, 1).is_err());
        assert!(LinearGaussianOracle::random(2, 2, 0.1, 1).unwrap().quadrature_log_likelihood(0.0).is_err());
    }
}
