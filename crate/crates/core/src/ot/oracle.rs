//! Slow reference solvers used to check Sinkhorn.

use nalgebra::{DMatrix, DVector};

use super::{CostMatrix, Coupling};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Largest `n·m` accepted by [`brute_force_entropic_ot`].
pub const ORACLE_MAX_ENTRIES: usize = 64;

const ORACLE_RESIDUAL: f64 = 1e-12;

const NEWTON_MAX_ITER: usize = 500;

fn plan_of(aa: &[f64], bb: &[f64], c: &[f64], lambda: f64, x: &[f64]) -> Vec<f64> {
    let (n, m) = (aa.len(), bb.len());
    let mut p = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let psi = if j + 1 < m { x[n + j] } else { 0.0 };
            p[i * m + j] = aa[i] * bb[j] * ((x[i] - psi - c[i * m + j]) / lambda).exp();
        }
    }
    p
}

/// Gradient of the dual in the gauge-fixed variables, and the largest
/// marginal violation.
fn gradient(aa: &[f64], bb: &[f64], p: &[f64]) -> (DVector<f64>, f64) {
    let (n, m) = (aa.len(), bb.len());
    let mut g = DVector::zeros(n + m - 1);
    let mut res: f64 = 0.0;
    for i in 0..n {
        let r: f64 = p[i * m..(i + 1) * m].iter().sum();
        g[i] = aa[i] - r;
        res = res.max(g[i].abs());
    }
    for j in 0..m {
        let s: f64 = (0..n).map(|i| p[i * m + j]).sum();
        if j + 1 < m {
            g[n + j] = s - bb[j];
        }
        res = res.max((s - bb[j]).abs());
    }
    (g, res)
}

/// Damped Newton ascent on the smooth dual
/// `F(φ,ψ) = Σa_iφ_i − Σb_jψ_j − λΣa_i b_j exp((φ_i−ψ_j−C_ij)/λ)` from `x`;
/// returns the final marginal violation.
fn newton(aa: &[f64], bb: &[f64], c: &[f64], lambda: f64, x: &mut Vec<f64>) -> f64 {
    let (n, m) = (aa.len(), bb.len());
    let dim = n + m - 1;
    let dual = |x: &[f64], p: &[f64]| -> f64 {
        let lin: f64 = (0..n).map(|i| aa[i] * x[i]).sum::<f64>() - (0..m - 1).map(|j| bb[j] * x[n + j]).sum::<f64>();
        lin - lambda * p.iter().sum::<f64>()
    };
    let mut p = plan_of(aa, bb, c, lambda, x);
    let mut f = dual(x, &p);
    for _ in 0..NEWTON_MAX_ITER {
        let (g, res) = gradient(aa, bb, &p);
        if res <= ORACLE_RESIDUAL {
            return res;
        }
        // negative Hessian, positive definite on the gauge-fixed space
        let mut h = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..m {
                let q = p[i * m + j] / lambda;
                h[(i, i)] += q;
                if j + 1 < m {
                    h[(n + j, n + j)] += q;
                    h[(i, n + j)] -= q;
                    h[(n + j, i)] -= q;
                }
            }
        }
        let ridge = 1e-10 * (0..dim).map(|k| h[(k, k)]).fold(0.0, f64::max);
        for k in 0..dim {
            h[(k, k)] += ridge;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => h.lu().solve(&g).unwrap_or_else(|| g.clone()),
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi + t * si).collect();
            let tp = plan_of(aa, bb, c, lambda, &trial);
            let tf = dual(&trial, &tp);
            // near machine precision the dual stops resolving progress, so a
            // smaller marginal violation is accepted as well
            if tf.is_finite() && (tf >= f + 1e-4 * t * slope || gradient(aa, bb, &tp).1 < 0.5 * res) {
                *x = trial;
                p = tp;
                f = tf;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return res;
        }
    }
    gradient(aa, bb, &p).1
}

/// Solves the entropic problem by damped Newton ascent on the smooth dual
/// with the gauge `ψ_m = 0` fixed. Rows or columns with zero weight carry
/// zero mass.
pub fn brute_force_entropic_ot(cost: &CostMatrix, a: &[f64], b: &[f64], lambda: f64) -> Result<Coupling> {
    let (n_full, m_full) = (cost.rows(), cost.cols());
    if n_full * m_full > ORACLE_MAX_ENTRIES {
        return Err(Error::OracleSizeCap {
            rows: n_full,
            cols: m_full,
        });
    }
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if a.len() != n_full || b.len() != m_full {
        return Err(Error::ShapeMismatch {
            context: "oracle marginals".into(),
            expected: vec![n_full, m_full],
            actual: vec![a.len(), b.len()],
        });
    }
    let rows: Vec<usize> = (0..n_full).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m_full).filter(|&j| b[j] > 0.0).collect();
    let (n, m) = (rows.len(), cols.len());
    if n == 0 || m == 0 {
        return Err(invalid("oracle marginals have no positive entries"));
    }
    let aa: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let bb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let c: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost.at(i, j)))
        .collect();

    // continuation: solve at a large λ first and halve towards the target,
    // warm-starting each solve from the previous potentials
    let spread = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - c.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut schedule = vec![lambda];
    while *schedule.last().expect("nonempty") < spread {
        let next = 2.0 * schedule.last().expect("nonempty");
        schedule.push(next);
    }
    schedule.reverse();
    let mut x = vec![0.0; n + m - 1];
    let mut res = f64::INFINITY;
    for &lam in &schedule {
        res = newton(&aa, &bb, &c, lam, &mut x);
    }
    if res > 1e-10 {
        return Err(Error::NotConverged {
            iterations: NEWTON_MAX_ITER,
            residual: res,
        });
    }
    let p = plan_of(&aa, &bb, &c, lambda, &x);

    let mut plan = vec![0.0; n_full * m_full];
    for (ii, &i) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            plan[i * m_full + j] = p[ii * m + jj];
        }
    }
    Ok(Coupling {
        plan: Tensor::matrix(n_full, m_full, plan)?,
        a: a.to_vec(),
        b: b.to_vec(),
    })
}

/// Unregularized optimal cost for uniform marginals on a square cost
/// matrix, by enumerating permutation couplings (Birkhoff vertices).
pub fn lp_by_permutation_enumeration(cost: &CostMatrix) -> Result<f64> {
    let n = cost.rows();
    if cost.cols() != n || n == 0 {
        return Err(invalid("permutation enumeration needs a nonempty square cost"));
    }
    if n > 9 {
        return Err(Error::OracleSizeCap { rows: n, cols: n });
    }
    // Heap's algorithm
    let mut perm: Vec<usize> = (0..n).collect();
    let score = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum::<f64>();
    let mut best = score(&perm);
    let mut counters = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            best = best.min(score(&perm));
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{sinkhorn, SinkhornOptions};
    use crate::rng::SeededRng;

    #[test]
    fn analytic_two_by_two() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let pi = brute_force_entropic_ot(&c, &[0.5, 0.5], &[0.5, 0.5], 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((pi.at(0, 0) - 0.5 / (1.0 + e)).abs() < 1e-8);
        assert!((pi.at(0, 1) - 0.5 * e / (1.0 + e)).abs() < 1e-8);
    }

    #[test]
    fn large_lambda_is_product() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.5]]).unwrap();
        let (a, b) = ([0.3, 0.7], [0.2, 0.5, 0.3]);
        let pi = brute_force_entropic_ot(&c, &a, &b, 1e6).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((pi.at(i, j) - a[i] * b[j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn size_cap() {
        let c = CostMatrix(Tensor::zeros(&[9, 8]));
        let u9 = vec![1.0 / 9.0; 9];
        let u8 = vec![0.125; 8];
        assert!(matches!(
            brute_force_entropic_ot(&c, &u9, &u8, 1.0),
            Err(Error::OracleSizeCap { rows: 9, cols: 8 })
        ));
    }

    #[test]
    fn agrees_with_sinkhorn() {
        let mut rng = SeededRng::new(17);
        for k in 0..20 {
            let (n, m) = (1 + rng.index(6), 1 + rng.index(6));
            let c = CostMatrix(Tensor::matrix(n, m, (0..n * m).map(|_| rng.uniform()).collect()).unwrap());
            let mut a: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
            let mut b: Vec<f64> = (0..m).map(|_| 0.05 + rng.uniform()).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            a.iter_mut().for_each(|x| *x /= sa);
            b.iter_mut().for_each(|x| *x /= sb);
            let lambda = if k % 2 == 0 { 0.1 } else { 1.0 };
            let o = brute_force_entropic_ot(&c, &a, &b, lambda).unwrap();
            let s = sinkhorn(&c, &a, &b, lambda, SinkhornOptions::default()).unwrap();
            assert!(o.max_abs_diff(&s.coupling) < 1e-6);
            assert!(o.marginal_violation() < 1e-10);
        }
    }

    #[test]
    fn small_lambda_with_sparse_plan() {
        let mut rng = SeededRng::new(3);
        let p = crate::SampleBatch::new(Tensor::matrix(5, 2, rng.normals(10)).unwrap()).unwrap();
        let q = crate::SampleBatch::new(Tensor::matrix(4, 2, rng.normals(8)).unwrap()).unwrap();
        let c = crate::ot::cost_matrix(crate::ot::LossKind::HalfSquaredL2, &p, &q).unwrap();
        let (a, b) = (p.weights(), q.weights());
        for lambda in [0.01, 0.003] {
            let o = brute_force_entropic_ot(&c, &a, &b, lambda).unwrap();
            let s = sinkhorn(&c, &a, &b, lambda, SinkhornOptions::default()).unwrap();
            assert!(o.max_abs_diff(&s.coupling) < 1e-6);
        }
    }

    #[test]
    fn permutation_enumeration() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(lp_by_permutation_enumeration(&c).unwrap(), 0.0);
        let c = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).unwrap();
        // best assignment 0→1, 1→0, 2→2
        assert!((lp_by_permutation_enumeration(&c).unwrap() - 5.0 / 3.0).abs() < 1e-15);
    }
}
