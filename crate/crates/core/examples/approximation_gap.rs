//! Trains a linear generator on 2-D linear-Gaussian data and reports the
//! approximation gap and surrogate log-likelihood of held-out points.
//!
//! `cargo run --release --example approximation_gap -- [iterations]`

use std::time::Instant;

use gan_likelihood::experiments::{table1_dimension, Table1Config, TrainSettings};

fn main() -> gan_likelihood::Result<()> {
    let iterations = std::env::args().nth(1).map_or(3000, |s| s.parse().expect("iterations"));
    let config = Table1Config {
        dims: vec![2],
        train: TrainSettings {
            iterations,
            ..TrainSettings::default()
        },
        ..Table1Config::default()
    };
    let start = Instant::now();
    let row = table1_dimension(&config, 2)?;
    println!("d = {}", row.dim);
    println!("approximation gap   {:.3e} ± {:.1e}", row.gap, row.gap_std_error);
    println!("surrogate log-lik   {:.4} ± {:.1e}", row.surrogate, row.surrogate_std_error);
    println!("data log-lik        {:.4}", row.data_log_likelihood);
    println!("elapsed             {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
