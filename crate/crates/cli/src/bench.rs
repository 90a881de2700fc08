use std::path::PathBuf;

use clap::Args;
use pswa_core::error::Result;
use pswa_core::harness::{measure_overhead, TrainingConfig};
use pswa_core::wsample::{SamplerConfig, Strategy};

#[derive(Args)]
pub struct BenchArgs {
    /// Base run configuration; its sampler section is overridden per strategy
    #[arg(long)]
    pub config: PathBuf,
    /// Timed repeats per strategy (one extra warm-up run is not timed)
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
}

fn with_sampler(base: &TrainingConfig, sampler: SamplerConfig, tag: &str) -> TrainingConfig {
    let mut cfg = base.clone();
    cfg.sampler = sampler;
    cfg.file.sampler.strategy = sampler.strategy.name().to_string();
    cfg.file.sampler.alpha = sampler.alpha;
    cfg.file.sampler.beta = sampler.beta;
    cfg.file.sampler.k = sampler.k;
    cfg.file.sampler.m = sampler.m;
    cfg.file.sampler.c = sampler.c;
    cfg.output_dir = base.output_dir.join(tag);
    cfg.file.run.output_dir = cfg.output_dir.display().to_string();
    cfg
}

/// Benchmarks the standard trio: no sampling, full-rate pswa
/// (alpha = beta = 1), and pwalks (k = 10, beta = 0.1).
pub fn run(args: BenchArgs) -> Result<i32> {
    let base = TrainingConfig::from_path(&args.config)?;
    let none = with_sampler(&base, SamplerConfig::new(Strategy::None), "none");
    let pswa = with_sampler(
        &base,
        SamplerConfig {
            alpha: 1.0,
            beta: 1.0,
            ..SamplerConfig::new(Strategy::Pswa)
        },
        "pswa",
    );
    let pwalks = with_sampler(
        &base,
        SamplerConfig {
            k: 10.0,
            beta: 0.1,
            ..SamplerConfig::new(Strategy::Pwalks)
        },
        "pwalks",
    );
    let work_dir = base.output_dir.join("bench");
    let report = measure_overhead(&[none, pswa, pwalks], args.repeats, &work_dir)?;
    println!("epoch wall-time over {} timed repeats:", report.repeats);
    println!("strategy,mean_s,sd_s,median_s,overhead_ratio");
    for e in &report.entries {
        println!(
            "{},{:.6},{:.6},{:.6},{:.4}",
            e.label, e.mean_s, e.sd_s, e.median_s, e.overhead_ratio
        );
    }
    Ok(0)
}
