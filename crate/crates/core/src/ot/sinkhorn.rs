use super::{logsumexp, CostMatrix};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Transport plan together with the marginals it was solved for.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub plan: Tensor,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Coupling {
    /// Wraps a plan, taking its own row and column sums as the marginals.
    pub fn from_plan(plan: Tensor) -> Result<Self> {
        if plan.rank() != 2 {
            return Err(invalid("coupling plan must be a matrix"));
        }
        if plan.data().iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("coupling entries must be finite and nonnegative"));
        }
        let a = row_sums(&plan);
        let b = col_sums(&plan);
        Ok(Self { plan, a, b })
    }

    pub fn rows(&self) -> usize {
        self.plan.rows()
    }

    pub fn cols(&self) -> usize {
        self.plan.cols()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.plan.at(i, j)
    }

    /// Largest absolute deviation of any row or column sum from its marginal.
    pub fn marginal_violation(&self) -> f64 {
        let rows = row_sums(&self.plan).iter().zip(&self.a).map(|(s, a)| (s - a).abs()).fold(0.0, f64::max);
        let cols = col_sums(&self.plan).iter().zip(&self.b).map(|(s, b)| (s - b).abs()).fold(0.0, f64::max);
        rows.max(cols)
    }

    pub fn max_abs_diff(&self, other: &Coupling) -> f64 {
        self.plan.max_abs_diff(&other.plan)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub lambda: f64,
}

impl DiscreteDualPotentials {
    /// `v_ij = φ_i − ψ_j − C_ij`
    pub fn violation(&self, cost: &CostMatrix, i: usize, j: usize) -> f64 {
        self.phi[i] - self.psi[j] - cost.at(i, j)
    }

    /// `π_ij = a_i b_j exp(v_ij/λ)`
    pub fn plan(&self, cost: &CostMatrix, a: &[f64], b: &[f64]) -> Tensor {
        let (n, m) = (a.len(), b.len());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let p = if a[i] == 0.0 || b[j] == 0.0 {
                    0.0
                } else {
                    (a[i].ln() + b[j].ln() + self.violation(cost, i, j) / self.lambda).exp()
                };
                data.push(p);
            }
        }
        Tensor::matrix(n, m, data).expect("plan shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    /// Stop once the L1 row-marginal violation is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    pub coupling: Coupling,
    pub potentials: DiscreteDualPotentials,
    pub iterations: usize,
    /// L1 row-marginal violation after each full sweep; columns are exact
    /// after every sweep.
    pub residuals: Vec<f64>,
}

fn row_sums(plan: &Tensor) -> Vec<f64> {
    (0..plan.rows()).map(|i| plan.row(i).iter().sum()).collect()
}

fn col_sums(plan: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; plan.cols()];
    for i in 0..plan.rows() {
        for (o, p) in out.iter_mut().zip(plan.row(i)) {
            *o += p;
        }
    }
    out
}

fn check_marginal(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(invalid(format!("marginal {name} is empty")));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(invalid(format!("marginal {name} has a negative or non-finite entry")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("marginal {name} sums to {s}")));
    }
    Ok(())
}

const POLISH_EVERY: usize = 100;
const POLISH_MAX_SIZE: usize = 400;

fn log_plan(c: &[f64], log_a: &[f64], log_b: &[f64], lambda: f64, phi: &[f64], psi: &[f64]) -> Vec<f64> {
    let m = log_b.len();
    let mut p = vec![0.0; c.len()];
    for (i, row) in p.chunks_mut(m).enumerate() {
        for j in 0..m {
            row[j] = (log_a[i] + log_b[j] + (phi[i] - psi[j] - c[i * m + j]) / lambda).exp();
        }
    }
    p
}

fn marginal_gap(p: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let (n, m) = (a.len(), b.len());
    let mut g = vec![0.0; n + m];
    for i in 0..n {
        g[i] = a[i] - p[i * m..(i + 1) * m].iter().sum::<f64>();
    }
    for j in 0..m {
        g[n + j] = (0..n).map(|i| p[i * m + j]).sum::<f64>() - b[j];
    }
    let l1 = g.iter().map(|x| x.abs()).sum();
    (g, l1)
}

/// Newton steps on the dual with the last column potential held fixed.
/// Sinkhorn contracts slowly when `max C / λ` is large; near the optimum a
/// few Newton steps finish the job. A step is kept only if it shrinks the
/// marginal violation.
fn newton_polish(c: &[f64], log_a: &[f64], log_b: &[f64], lambda: f64, phi: &mut [f64], psi: &mut [f64]) {
    let (n, m) = (log_a.len(), log_b.len());
    let a: Vec<f64> = log_a.iter().map(|x| x.exp()).collect();
    let b: Vec<f64> = log_b.iter().map(|x| x.exp()).collect();
    let rows: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| b[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return;
    }
    let fixed = *cols.last().expect("nonempty");
    let free: Vec<usize> = cols.iter().copied().filter(|&j| j != fixed).collect();
    let dim = rows.len() + free.len();
    let mut p = log_plan(c, log_a, log_b, lambda, phi, psi);
    let (mut g, mut res) = marginal_gap(&p, &a, &b);
    for _ in 0..20 {
        if res < 1e-14 {
            break;
        }
        let mut h = nalgebra::DMatrix::zeros(dim, dim);
        let mut rhs = nalgebra::DVector::zeros(dim);
        for (r, &i) in rows.iter().enumerate() {
            rhs[r] = g[i];
            for j in 0..m {
                h[(r, r)] += p[i * m + j] / lambda;
            }
        }
        for (s, &j) in free.iter().enumerate() {
            let k = rows.len() + s;
            rhs[k] = g[n + j];
            for (r, &i) in rows.iter().enumerate() {
                let q = p[i * m + j] / lambda;
                h[(k, k)] += q;
                h[(r, k)] -= q;
                h[(k, r)] -= q;
            }
        }
        // blocks of the plan can decouple numerically; the ridge keeps the
        // step bounded along those near-null directions
        let ridge = 1e-10 * (0..dim).map(|k| h[(k, k)]).fold(0.0, f64::max);
        for k in 0..dim {
            h[(k, k)] += ridge;
        }
        let Some(step) = h.cholesky().map(|ch| ch.solve(&rhs)) else {
            return;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (mut tphi, mut tpsi) = (phi.to_vec(), psi.to_vec());
            for (r, &i) in rows.iter().enumerate() {
                tphi[i] += t * step[r];
            }
            for (s, &j) in free.iter().enumerate() {
                tpsi[j] += t * step[rows.len() + s];
            }
            let tp = log_plan(c, log_a, log_b, lambda, &tphi, &tpsi);
            let (tg, tres) = marginal_gap(&tp, &a, &b);
            if tres.is_finite() && tres < res {
                phi.copy_from_slice(&tphi);
                psi.copy_from_slice(&tpsi);
                p = tp;
                g = tg;
                res = tres;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

/// Log-domain Sinkhorn iterations for the entropic problem with cost `C`,
/// marginals `a`, `b` and regularization `λ`.
pub fn sinkhorn(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    lambda: f64,
    options: SinkhornOptions,
) -> Result<SinkhornSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let (n, m) = (cost.rows(), cost.cols());
    if a.len() != n || b.len() != m {
        return Err(Error::ShapeMismatch {
            context: "sinkhorn marginals".into(),
            expected: vec![n, m],
            actual: vec![a.len(), b.len()],
        });
    }
    check_marginal("a", a)?;
    check_marginal("b", b)?;
    if !cost.0.is_finite() {
        return Err(invalid("cost matrix has non-finite entries"));
    }

    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let c = cost.0.data();
    let mut phi = vec![0.0; n];
    let mut psi = vec![0.0; m];
    let mut residuals = Vec::new();
    let mut iterations = 0;

    loop {
        // φ_i = −λ LSE_j(log b_j + (−ψ_j − C_ij)/λ)
        for i in 0..n {
            let row = &c[i * m..(i + 1) * m];
            let lse = logsumexp((0..m).map(|j| log_b[j] + (-psi[j] - row[j]) / lambda));
            phi[i] = -lambda * lse;
        }
        // ψ_j = λ LSE_i(log a_i + (φ_i − C_ij)/λ)
        for j in 0..m {
            let lse = logsumexp((0..n).map(|i| log_a[i] + (phi[i] - c[i * m + j]) / lambda));
            psi[j] = lambda * lse;
        }
        iterations += 1;

        let mut residual = 0.0;
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            let row = &c[i * m..(i + 1) * m];
            let log_row = logsumexp((0..m).map(|j| log_b[j] + (phi[i] - psi[j] - row[j]) / lambda));
            residual += (a[i] * log_row.exp() - a[i]).abs();
        }
        if !residual.is_finite() {
            return Err(Error::NumericOverflow {
                node: iterations,
                op: "sinkhorn",
            });
        }
        residuals.push(residual);
        if residual <= options.tol {
            break;
        }
        if iterations >= options.max_iter {
            return Err(Error::NotConverged { iterations, residual });
        }
        if iterations % POLISH_EVERY == 0 && residual < 1e-3 && n + m <= POLISH_MAX_SIZE {
            newton_polish(c, &log_a, &log_b, lambda, &mut phi, &mut psi);
        }
    }

    let potentials = DiscreteDualPotentials { phi, psi, lambda };
    let plan = potentials.plan(cost, a, b);
    Ok(SinkhornSolution {
        coupling: Coupling {
            plan,
            a: a.to_vec(),
            b: b.to_vec(),
        },
        potentials,
        iterations,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn anti() -> CostMatrix {
        CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn solve(c: &CostMatrix, lambda: f64) -> SinkhornSolution {
        let a = vec![1.0 / c.rows() as f64; c.rows()];
        let b = vec![1.0 / c.cols() as f64; c.cols()];
        sinkhorn(c, &a, &b, lambda, SinkhornOptions::default()).unwrap()
    }

    #[test]
    fn symmetric_gibbs_fixed_point() {
        let s = solve(&anti(), 1.0);
        let e = (-1.0f64).exp();
        let diag = 0.5 / (1.0 + e);
        let off = 0.5 * e / (1.0 + e);
        assert!((diag - 0.36552).abs() < 1e-5 && (off - 0.13448).abs() < 1e-5);
        let p = &s.coupling.plan;
        for (i, j, want) in [(0, 0, diag), (0, 1, off), (1, 0, off), (1, 1, diag)] {
            assert!((p.at(i, j) - want).abs() < 1e-9, "{i}{j}");
        }
    }

    #[test]
    fn large_lambda_is_product() {
        // the exact diagonal at λ = 100 is 0.5/(1 + e^-0.01) ≈ 0.25125
        let s = solve(&anti(), 100.0);
        assert!(s.coupling.plan.data().iter().all(|p| (p - 0.25).abs() < 1.5e-3));
        let s = solve(&anti(), 1000.0);
        assert!(s.coupling.plan.data().iter().all(|p| (p - 0.25).abs() < 1e-3));
    }

    #[test]
    fn small_lambda_is_permutation() {
        let s = solve(&anti(), 0.01);
        let p = &s.coupling.plan;
        assert!((p.at(0, 0) - 0.5).abs() < 1e-4 && (p.at(1, 1) - 0.5).abs() < 1e-4);
        assert!(p.at(0, 1) < 1e-4 && p.at(1, 0) < 1e-4);
    }

    #[test]
    fn rejects_bad_lambda_and_marginals() {
        let c = anti();
        let u = [0.5, 0.5];
        for l in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                sinkhorn(&c, &u, &u, l, SinkhornOptions::default()),
                Err(Error::InvalidArgument(_))
            ));
        }
        assert!(sinkhorn(&c, &[0.7, 0.7], &u, 1.0, SinkhornOptions::default()).is_err());
        assert!(sinkhorn(&c, &[0.5, 0.5, 0.0], &u, 1.0, SinkhornOptions::default()).is_err());
    }

    #[test]
    fn max_iter_error_carries_residual() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0, 0.3], vec![0.2, 0.0, 2.0]]).unwrap();
        let opts = SinkhornOptions {
            tol: 1e-300,
            max_iter: 3,
        };
        match sinkhorn(&c, &[0.3, 0.7], &[0.2, 0.5, 0.3], 0.05, opts) {
            Err(Error::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_weight_entries_get_zero_mass() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let s = sinkhorn(&c, &[0.5, 0.5, 0.0], &[0.5, 0.5], 0.5, SinkhornOptions::default()).unwrap();
        assert_eq!(s.coupling.plan.row(2), &[0.0, 0.0]);
        assert!(s.coupling.marginal_violation() < 1e-8);
    }

    #[test]
    fn residuals_non_increasing_and_feasible() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let n = 2 + rng.index(5);
            let m = 2 + rng.index(5);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.uniform()).collect()).collect();
            let c = CostMatrix::from_rows(&rows).unwrap();
            let mut a: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
            let mut b: Vec<f64> = (0..m).map(|_| 0.1 + rng.uniform()).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            a.iter_mut().for_each(|x| *x /= sa);
            b.iter_mut().for_each(|x| *x /= sb);
            let s = sinkhorn(&c, &a, &b, 0.05, SinkhornOptions::default()).unwrap();
            for w in s.residuals.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{:?}", w);
            }
            assert!(s.coupling.marginal_violation() < 1e-8);
        }
    }
}
