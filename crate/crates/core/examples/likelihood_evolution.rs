//! Median surrogate likelihood of held-out data at each training checkpoint.
//!
//! `cargo run --release --example likelihood_evolution -- [iterations] [cadence]`

use gan_likelihood::experiments::{cmd_evolution, EvolutionConfig, TrainSettings};

fn main() -> gan_likelihood::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(1000, |s| s.parse().expect("iterations"));
    let cadence = args.next().map_or(200, |s| s.parse().expect("cadence"));
    let dir = std::env::temp_dir().join("gan-likelihood-evolution");
    let config = EvolutionConfig {
        train: TrainSettings {
            iterations,
            checkpoint_every: cadence,
            ..EvolutionConfig::default().train
        },
        out_dir: dir,
        ..EvolutionConfig::default()
    };
    let (summary, checkpoints) = cmd_evolution(&config)?;
    for c in &checkpoints {
        println!("iteration {:>5}  median {:>9.3}", c.iteration, c.median);
    }
    println!("summary written to {}", summary.display());
    Ok(())
}
