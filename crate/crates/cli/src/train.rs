use std::path::PathBuf;

use clap::Args;
use pswa_core::error::Result;
use pswa_core::harness::{run_training, Checkpoint, NoopObserver, TrainingConfig};

#[derive(Args)]
pub struct TrainArgs {
    /// Run configuration file (TOML)
    #[arg(long)]
    pub config: PathBuf,
    /// Resume from a checkpoint; training continues at its absolute epoch
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<i32> {
    let config = TrainingConfig::from_path(&args.config)?;
    let resume = match &args.resume {
        Some(path) => Some(Checkpoint::read_from(path)?),
        None => None,
    };
    let out = run_training(&config, resume.as_ref(), &mut NoopObserver)?;
    if let Some(last) = out.records.last() {
        println!(
            "trained {} epochs (sampler {}): train_acc {:.4} test_acc {:.4}",
            out.records.len(),
            config.sampler.strategy.name(),
            last.train_acc,
            last.test_acc
        );
    }
    println!("run directory: {}", out.run_dir.display());
    Ok(0)
}
