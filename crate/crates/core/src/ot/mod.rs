//! Discrete entropic optimal transport.
//!
//! Couplings are parameterized by dual potentials as
//! `π_ij = a_i b_j exp((φ_i − ψ_j − C_ij)/λ)`, the discrete analogue of the
//! discriminator pair of the entropic GAN dual: `φ` plays `D₁`, `ψ` plays `D₂`.

mod cost;
mod objective;
pub mod oracle;
mod sinkhorn;

pub use crate::batch::SampleBatch;
pub use cost::{cost_matrix, CostMatrix, LossKind};
pub use objective::{
    entropic_objective, entropic_ot_value, entropy, sinkhorn_loss, EntropyVariant,
};
pub use oracle::{brute_force_entropic_ot, lp_by_permutation_enumeration};
pub use sinkhorn::{sinkhorn, Coupling, DiscreteDualPotentials, SinkhornOptions, SinkhornSolution};

/// `log Σ exp(xₖ)`, skipping `-∞` entries; `-∞` when all are.
pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}
