//! Entropic coupling between two small point clouds, checked against the
//! Newton reference solver, and the debiased Sinkhorn loss.

use gan_likelihood::ot::{
    brute_force_entropic_ot, cost_matrix, entropic_objective, sinkhorn, sinkhorn_loss, EntropyVariant, LossKind,
    SinkhornOptions,
};
use gan_likelihood::rng::SeededRng;
use gan_likelihood::{SampleBatch, Tensor};

fn main() -> gan_likelihood::Result<()> {
    let mut rng = SeededRng::new(3);
    let p = SampleBatch::new(Tensor::matrix(5, 2, rng.normals(10))?)?;
    let q = SampleBatch::new(Tensor::matrix(4, 2, rng.normals(8))?)?;
    let cost = cost_matrix(LossKind::HalfSquaredL2, &p, &q)?;
    let (a, b) = (p.weights(), q.weights());

    for lambda in [1.0, 0.1, 0.01] {
        let sol = sinkhorn(&cost, &a, &b, lambda, SinkhornOptions::default())?;
        let reference = brute_force_entropic_ot(&cost, &a, &b, lambda)?;
        let value = entropic_objective(&sol.coupling, &cost, lambda, EntropyVariant::KLtoProduct)?;
        println!(
            "λ = {lambda:<5} sweeps {:>5}  value {value:>9.5}  max |Δπ| vs reference {:.1e}",
            sol.iterations,
            sol.coupling.max_abs_diff(&reference)
        );
    }

    let sol = sinkhorn(&cost, &a, &b, 0.05, SinkhornOptions::default())?;
    println!("\ncoupling at λ = 0.05:");
    for i in 0..sol.coupling.rows() {
        let row: Vec<String> = (0..sol.coupling.cols()).map(|j| format!("{:.4}", sol.coupling.at(i, j))).collect();
        println!("  {}", row.join("  "));
    }
    println!("\nsinkhorn loss (λ = 0.1): {:.6}", sinkhorn_loss(&p, &q, LossKind::HalfSquaredL2, 0.1)?);
    Ok(())
}
