//! Latent posterior of a test point under the coupling of a 1-D model
//! whose discriminators are the exact optimal potentials, compared with the
//! closed-form Gaussian posterior.

use gan_likelihood::gan::EntropicGanModel;
use gan_likelihood::gaussian::LinearGaussianOracle;
use gan_likelihood::inference::{latent_posterior, WeightMode};
use gan_likelihood::nets::{Activation, Layer, Mlp, MlpParams, MlpSpec};
use gan_likelihood::ot::LossKind;
use gan_likelihood::Tensor;

fn linear(w: f64) -> gan_likelihood::Result<Mlp> {
    let spec = MlpSpec::uniform(vec![1, 1], Activation::Identity)?;
    Mlp::new(
        spec,
        MlpParams {
            layers: vec![Layer {
                weight: Tensor::matrix(1, 1, vec![w])?,
                bias: Tensor::vector(vec![0.0]),
            }],
        },
    )
}

fn main() -> gan_likelihood::Result<()> {
    let (g, lambda) = (1.5, 0.2);
    // with zero discriminators exp(v/λ) is the Gaussian observation model,
    // so the weighted prior draws target the exact posterior
    let zero = || -> gan_likelihood::Result<Mlp> {
        let spec = MlpSpec::uniform(vec![1, 1], Activation::Identity)?;
        Ok(Mlp::new(spec.clone(), MlpParams::zeros(&spec))?)
    };
    let model = EntropicGanModel::new(linear(g)?, zero()?, zero()?, lambda, LossKind::HalfSquaredL2, 1, 0)?;
    let oracle = LinearGaussianOracle::new(&Tensor::matrix(1, 1, vec![g])?, lambda)?;
    for y in [-1.0, 0.5, 2.0] {
        let post = latent_posterior(&[y], &model, 20_000, 3, WeightMode::Snis)?;
        let (mean, se) = post.expectation(|i| post.latent(i)[0]);
        let (exact, var) = oracle.posterior(&[y])?;
        println!(
            "y = {y:+.1}  weighted mean {mean:+.4} ± {se:.4}  exact {:+.4}  (posterior sd {:.3}, ess {:.0})",
            exact[0],
            var.item().sqrt(),
            post.effective_sample_size()
        );
    }
    Ok(())
}
