use serde::{Deserialize, Serialize};

use super::{cost_matrix, sinkhorn, CostMatrix, Coupling, LossKind, SinkhornOptions};
use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// Which entropy term regularizes the transport cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyVariant {
    /// `Σπ_ij C_ij − λH(π)`
    ShannonJoint,
    /// `Σπ_ij C_ij + λ KL(π ‖ a⊗b)`
    KLtoProduct,
}

/// Shannon entropy `−Σ p log p` with `0·log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

pub fn entropic_objective(
    coupling: &Coupling,
    cost: &CostMatrix,
    lambda: f64,
    variant: EntropyVariant,
) -> Result<f64> {
    let (n, m) = (coupling.rows(), coupling.cols());
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::ShapeMismatch {
            context: "objective cost matrix".into(),
            expected: vec![n, m],
            actual: vec![cost.rows(), cost.cols()],
        });
    }
    let mut transport = 0.0;
    let mut reg = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = coupling.at(i, j);
            if p <= 0.0 {
                continue;
            }
            transport += p * cost.at(i, j);
            reg += match variant {
                EntropyVariant::ShannonJoint => p * p.ln(),
                EntropyVariant::KLtoProduct => p * (p.ln() - coupling.a[i].ln() - coupling.b[j].ln()),
            };
        }
    }
    Ok(transport + lambda * reg)
}

/// `W_{ℓ,λ}(P, Q)`: the KL-regularized optimal transport value.
pub fn entropic_ot_value(p: &SampleBatch, q: &SampleBatch, loss: LossKind, lambda: f64) -> Result<f64> {
    let cost = cost_matrix(loss, p, q)?;
    let sol = sinkhorn(&cost, &p.weights(), &q.weights(), lambda, SinkhornOptions::default())?;
    entropic_objective(&sol.coupling, &cost, lambda, EntropyVariant::KLtoProduct)
}

/// `2W(P,Q) − W(P,P) − W(Q,Q)`
pub fn sinkhorn_loss(p: &SampleBatch, q: &SampleBatch, loss: LossKind, lambda: f64) -> Result<f64> {
    let pq = entropic_ot_value(p, q, loss, lambda)?;
    let pp = entropic_ot_value(p, p, loss, lambda)?;
    let qq = entropic_ot_value(q, q, loss, lambda)?;
    Ok(2.0 * pq - pp - qq)
}
