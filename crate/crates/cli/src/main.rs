//! `pswa`: train models with periodic weight-sampling strategies and run
//! the companion analyses (accuracy analytics, convex-bound checks,
//! loss-surface scans, overhead benchmarks).

mod analyze;
mod bench;
mod convex_check;
mod surface_scan;
mod train;

use clap::{Parser, Subcommand};
use pswa_core::error::Error;

#[derive(Parser)]
#[command(
    name = "pswa",
    version,
    about = "Periodic weight-sampling training (PSWA/PWALKS/PSWM) with baselines and analysis tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training per a TOML config; writes metrics.csv and checkpoints
    Train(train::TrainArgs),
    /// Analyze a metrics CSV: threshold epochs, window stats, monotonicity
    Analyze(analyze::AnalyzeArgs),
    /// Verify the convergence bounds on a noisy quadratic
    ConvexCheck(convex_check::ConvexCheckArgs),
    /// 1-D loss-surface scan or two-checkpoint interpolation
    Surface(surface_scan::SurfaceArgs),
    /// Compare per-epoch wall time across sampling strategies
    BenchOverhead(bench::BenchArgs),
}

// Exit codes: 0 success, 1 validation error, 2 runtime/numeric error,
// 3 convex-check bound failure.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => 1,
        Error::Numeric(_) | Error::Format(_) | Error::Io(_) => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train::run(args),
        Command::Analyze(args) => analyze::run(args),
        Command::ConvexCheck(args) => convex_check::run(args),
        Command::Surface(args) => surface_scan::run(args),
        Command::BenchOverhead(args) => bench::run(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
