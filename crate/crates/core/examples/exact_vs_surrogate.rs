//! Leaky-rectifier generators on linear-Gaussian data: the exact data
//! log-likelihood against the surrogate lower bound.
//!
//! `cargo run --release --example exact_vs_surrogate -- [dims] [iterations]`
//! with `dims` comma separated, e.g. `5,10`.

use std::time::Instant;

use gan_likelihood::experiments::{table2_dimension, Table2Config, TrainSettings};

fn main() -> gan_likelihood::Result<()> {
    let mut args = std::env::args().skip(1);
    let dims: Vec<usize> = args
        .next()
        .map_or_else(|| vec![5], |s| s.split(',').map(|d| d.parse().expect("dimension")).collect());
    let iterations = args.next().map_or(3000, |s| s.parse().expect("iterations"));
    let config = Table2Config {
        train: TrainSettings {
            iterations,
            ..TrainSettings::default()
        },
        ..Table2Config::default()
    };
    for d in dims {
        let start = Instant::now();
        let row = table2_dimension(&config, d)?;
        let rel = (row.exact - row.surrogate).abs() / row.exact.abs();
        println!(
            "d = {:>2}  exact {:>9.4}  surrogate {:>9.4} ± {:.1e}  relative gap {:.3}  ({:.0}s)",
            d,
            row.exact,
            row.surrogate,
            row.surrogate_std_error,
            rel,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
