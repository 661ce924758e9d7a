//! The experiment pipeline as library calls: generate data, train, score,
//! and run the Sinkhorn checks, all written under a temporary directory.

use gan_likelihood::experiments::{
    cmd_gen_data, cmd_likelihood, cmd_sinkhorn_check, cmd_train, read_csv, GenDataConfig, GeneratorKind,
    LikelihoodCmdConfig, SinkhornCheckConfig, TrainCmdConfig, TrainSettings,
};
use gan_likelihood::likelihood::LikelihoodOptions;

fn main() -> gan_likelihood::Result<()> {
    let dir = std::env::temp_dir().join("gan-likelihood-walkthrough");
    let data = cmd_gen_data(&GenDataConfig {
        samples: 2000,
        out_dir: dir.clone(),
        ..Default::default()
    })?;
    let settings = TrainSettings {
        iterations: 100,
        batch_size: 64,
        hidden: vec![32, 32],
        checkpoint_every: 50,
        ..Default::default()
    };
    let train = cmd_train(&TrainCmdConfig {
        data: data.data.clone(),
        train: settings.config(GeneratorKind::Linear.spec(2, 2, &settings.hidden)?, 0.1, 1),
        out_dir: dir.clone(),
    })?;
    let scores = cmd_likelihood(&LikelihoodCmdConfig {
        model: train.model.clone(),
        samples: data.data.clone(),
        options: LikelihoodOptions::differential(500, 2),
        out_dir: dir.clone(),
    })?;
    let (check, rows) = cmd_sinkhorn_check(&SinkhornCheckConfig {
        instances: 20,
        out_dir: dir.clone(),
        ..Default::default()
    })?;
    let (_, scored) = read_csv(&scores)?;
    println!("dataset      {}", data.data.display());
    println!("model        {}", train.model.display());
    println!("checkpoints  {}", train.checkpoints.len());
    println!("scored rows  {}", scored.len());
    println!(
        "sinkhorn     {} ({} of {} sandwich checks pass)",
        check.display(),
        rows.iter().filter(|r| r.sandwich).count(),
        rows.len()
    );
    Ok(())
}
