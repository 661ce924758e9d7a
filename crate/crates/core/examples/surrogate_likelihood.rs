//! Surrogate log-likelihoods of in-distribution and shifted points under a
//! trained model, with both estimators.

use gan_likelihood::gan::{train, TrainConfig};
use gan_likelihood::gaussian::LinearGaussianOracle;
use gan_likelihood::likelihood::{median, per_sample_likelihoods, LikelihoodOptions};
use gan_likelihood::nets::MlpSpec;
use gan_likelihood::SampleBatch;

fn main() -> gan_likelihood::Result<()> {
    let oracle = LinearGaussianOracle::random(2, 2, 0.1, 21)?;
    let data = oracle.sample_data(5000, 22)?;
    let mut config = TrainConfig::new(MlpSpec::linear_generator(2, 2));
    config.iterations = 300;
    config.discriminator_hidden = vec![64, 64];
    config.batch_size = 128;
    let (model, _) = train(&config, &data)?;

    let inside = oracle.sample_data(200, 23)?;
    let shifted = SampleBatch::new(inside.points().map(|v| v + 4.0))?;
    for (name, opts) in [
        ("discrete", LikelihoodOptions::discrete(2000, 1)),
        ("differential", LikelihoodOptions::differential(2000, 1)),
    ] {
        let a: Vec<f64> = per_sample_likelihoods(&inside, &model, &opts)?.iter().map(|r| r.total).collect();
        let b: Vec<f64> = per_sample_likelihoods(&shifted, &model, &opts)?.iter().map(|r| r.total).collect();
        println!("{name:>12}: median in-distribution {:>9.3}  shifted {:>9.3}", median(&a), median(&b));
    }
    let y = inside.point(0);
    let exact = oracle.exact_log_likelihood(y)?;
    let r = gan_likelihood::likelihood::surrogate_log_likelihood(y, &model, &LikelihoodOptions::differential(20_000, 2))?;
    println!(
        "\none point: exact {exact:.4}  surrogate {:.4} ± {:.4} = cost {:.3} + entropy {:.3} + prior {:.3} + constant {:.3}",
        r.total, r.std_error, r.cost, r.entropy, r.prior, r.constant
    );
    Ok(())
}
