//! Trains an entropic GAN on 2-D linear-Gaussian data, prints the training
//! curve and compares generated moments with the data.

use gan_likelihood::gan::{train, TrainConfig};
use gan_likelihood::gaussian::LinearGaussianOracle;
use gan_likelihood::nets::MlpSpec;

fn moments(points: &gan_likelihood::Tensor) -> ([f64; 2], [f64; 3]) {
    let n = points.rows() as f64;
    let mut mean = [0.0; 2];
    for i in 0..points.rows() {
        for k in 0..2 {
            mean[k] += points.at(i, k) / n;
        }
    }
    let mut cov = [0.0; 3];
    for i in 0..points.rows() {
        let (a, b) = (points.at(i, 0) - mean[0], points.at(i, 1) - mean[1]);
        cov[0] += a * a / n;
        cov[1] += a * b / n;
        cov[2] += b * b / n;
    }
    (mean, cov)
}

fn main() -> gan_likelihood::Result<()> {
    let oracle = LinearGaussianOracle::random(2, 2, 0.1, 11)?;
    let data = oracle.sample_data(5000, 12)?;
    let mut config = TrainConfig::new(MlpSpec::linear_generator(2, 2));
    config.iterations = 300;
    config.discriminator_hidden = vec![64, 64];
    config.batch_size = 128;
    config.seed = 13;
    let (model, log) = train(&config, &data)?;
    for r in log.records.iter().step_by(50) {
        println!(
            "iteration {:>4}  dual {:>9.4}  mean violation {:>9.4}",
            r.iteration, r.dual_objective, r.mean_violation
        );
    }
    let fake = model.sample(5000, 14)?;
    let (dm, dc) = moments(data.points());
    let (fm, fc) = moments(fake.points());
    println!("data mean {dm:.3?} cov {dc:.3?}");
    println!("fake mean {fm:.3?} cov {fc:.3?}");
    Ok(())
}
