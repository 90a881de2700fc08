use std::path::PathBuf;

use clap::Args;
use pswa_core::analytics::{
    compare_runs, monotonic_stats, threshold_epoch, window_stats, AccuracySeries,
};
use pswa_core::error::{Error, Result};
use pswa_core::harness::read_metrics;

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Metrics CSV produced by `pswa train`
    #[arg(long)]
    pub metrics: PathBuf,
    /// Accuracy column to analyze
    #[arg(long, default_value = "test_acc", value_parser = ["test_acc", "train_acc"])]
    pub column: String,
    /// Accuracy thresholds in percent (repeatable)
    #[arg(long = "threshold")]
    pub thresholds: Vec<f64>,
    /// Epoch window START:END (half-open) for mean/SD
    #[arg(long)]
    pub window: Option<String>,
    /// Stability tolerance in accuracy percentage points
    #[arg(long, default_value_t = 0.2)]
    pub tol: f64,
    /// Baseline metrics CSV for mean pointwise improvement
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

fn load_series(path: &PathBuf, column: &str) -> Result<AccuracySeries> {
    let rows = read_metrics(path)?;
    let fractions: Vec<f64> = rows
        .iter()
        .map(|r| match column {
            "train_acc" => r.train_acc,
            _ => r.test_acc,
        })
        .collect();
    if fractions.iter().any(|v| v.is_nan()) {
        return Err(Error::usage(format!(
            "{}: column '{column}' has unevaluated epochs (eval_every > 1); \
             re-run training with eval_every = 1 to analyze it",
            path.display()
        )));
    }
    AccuracySeries::from_fractions(&fractions)
}

fn parse_window(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::usage(format!("window '{spec}' must be START:END")));
    }
    let start = parts[0]
        .parse()
        .map_err(|_| Error::usage(format!("window start '{}' is not an integer", parts[0])))?;
    let end = parts[1]
        .parse()
        .map_err(|_| Error::usage(format!("window end '{}' is not an integer", parts[1])))?;
    Ok((start, end))
}

pub fn run(args: AnalyzeArgs) -> Result<i32> {
    let series = load_series(&args.metrics, &args.column)?;
    println!(
        "series: {} from {} ({} epochs, percent)",
        args.column,
        args.metrics.display(),
        series.len()
    );
    for &t in &args.thresholds {
        match threshold_epoch(&series, t) {
            Some(e) => println!("threshold {t}: epoch {e}"),
            None => println!("threshold {t}: N.A."),
        }
    }
    if let Some(w) = &args.window {
        let (start, end) = parse_window(w)?;
        let (mean, sd) = window_stats(&series, start, end)?;
        println!("window {start}:{end}: mean {mean:.4} sd {sd:.4}");
    }
    if series.len() >= 2 {
        let m = monotonic_stats(&series, args.tol)?;
        println!(
            "monotonic (tol {}): improve {:.4} stable {:.4} stable_vs_max {:.4}",
            args.tol, m.improve_frac, m.stable_frac, m.stable_vs_max_frac
        );
    }
    if let Some(baseline_path) = &args.baseline {
        let baseline = load_series(baseline_path, &args.column)?;
        let (start, end) = match &args.window {
            Some(w) => parse_window(w)?,
            None => (0, series.len()),
        };
        let improvement = compare_runs(&series, &baseline, start, end)?;
        println!("mean improvement over baseline ({start}:{end}): {improvement:+.4}");
    }
    Ok(0)
}
