use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use pswa_core::error::{Error, Result};
use pswa_core::harness::{apply_checkpoint, Checkpoint, TrainingConfig};
use pswa_core::nn::Model;
use pswa_core::rng::{stream, Purpose};
use pswa_core::surface::{filter_normalize, interpolate, lambda_grid, sample_direction, scan_1d, ScanResult};

#[derive(Args)]
pub struct SurfaceArgs {
    /// Checkpoint to scan (or interpolation start when --checkpoint-b is given)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Second checkpoint: switches from a random-direction scan to
    /// interpolation between the two
    #[arg(long = "checkpoint-b")]
    pub checkpoint_b: Option<PathBuf>,
    /// Run config describing the model architecture and datasets
    #[arg(long)]
    pub config: PathBuf,
    /// Grid size
    #[arg(long, default_value_t = 41)]
    pub points: usize,
    /// Grid minimum (default -1 for scans, 0 for interpolation)
    #[arg(long)]
    pub min: Option<f64>,
    /// Grid maximum (default 1)
    #[arg(long)]
    pub max: Option<f64>,
    /// Seed for the random scan direction (defaults to run.seed)
    #[arg(long)]
    pub direction_seed: Option<u64>,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_model(config: &TrainingConfig, path: &PathBuf) -> Result<Model> {
    let ckpt = Checkpoint::read_from(path)?;
    let mut model = Model::new(
        config.model.clone(),
        &mut stream(config.seed, Purpose::Init, 0),
    )?;
    let mut optimizer = config.build_optimizer();
    apply_checkpoint(&ckpt, &mut model, &mut optimizer).map_err(|e| {
        Error::usage(format!(
            "{}: checkpoint does not fit the configured model ({e})",
            path.display()
        ))
    })?;
    Ok(model)
}

fn emit(result: &ScanResult, out: Option<&PathBuf>) -> Result<()> {
    let mut text = String::from("lambda,train_loss,train_acc,test_loss,test_acc\n");
    for i in 0..result.lambdas.len() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            result.lambdas[i],
            result.train_loss[i],
            result.train_acc[i],
            result.test_loss[i],
            result.test_acc[i]
        ));
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(args: SurfaceArgs) -> Result<i32> {
    let config = TrainingConfig::from_path(&args.config)?;
    let (train, test) = config.load_data()?;
    let interpolating = args.checkpoint_b.is_some();
    let min = args.min.unwrap_or(if interpolating { 0.0 } else { -1.0 });
    let max = args.max.unwrap_or(1.0);
    let grid = lambda_grid(min, max, args.points)?;

    let mut model = load_model(&config, &args.checkpoint)?;
    let result = match &args.checkpoint_b {
        Some(path_b) => {
            let model_b = load_model(&config, path_b)?;
            interpolate(&model, &model_b, &train, &test, &grid, config.batch_size)?
        }
        None => {
            let seed = args.direction_seed.unwrap_or(config.seed);
            let mut direction = sample_direction(&model, seed);
            filter_normalize(&mut direction, &model)?;
            scan_1d(&mut model, &train, &test, &direction, &grid, config.batch_size)?
        }
    };
    emit(&result, args.out.as_ref())?;
    Ok(0)
}
