use clap::Args;
use pswa_core::convex::{verify_stability, ConvexProblem};
use pswa_core::error::Result;

#[derive(Args)]
pub struct ConvexCheckArgs {
    /// Domain diameter D
    #[arg(long = "D", default_value_t = 2.0)]
    pub diameter: f64,
    /// Gradient bound G; the oracle noise radius is sqrt(G^2 - (D/2)^2)
    #[arg(long = "G", default_value_t = std::f64::consts::SQRT_2)]
    pub grad_bound: f64,
    /// Iterations per epoch T
    #[arg(long = "T", default_value_t = 500)]
    pub iters_per_epoch: usize,
    /// Epochs E
    #[arg(long = "E", default_value_t = 5)]
    pub epochs: usize,
    /// Monte-Carlo runs averaged per epoch
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Problem dimension
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
}

pub fn run(args: ConvexCheckArgs) -> Result<i32> {
    let problem = ConvexProblem::with_grad_bound(args.dim, args.diameter, args.grad_bound)?;
    let report = verify_stability(
        &problem,
        args.iters_per_epoch,
        args.epochs,
        args.runs,
        args.seed,
    )?;
    println!(
        "problem: dim={} D={} G={:.6} (noise r={:.6}) T={} E={} runs={} seed={}",
        problem.dim(),
        problem.diameter(),
        problem.grad_bound(),
        problem.noise_radius(),
        report.iters_per_epoch,
        report.epochs,
        report.runs,
        args.seed
    );
    println!("epoch,sgd_gap,thm1_bound,sgd_ok,pswa_gap,thm2_bound,pswa_ok");
    for k in 0..report.epochs {
        let e = k + 1;
        let sgd = report.sgd_gaps[k];
        let pswa = report.pswa_gaps[k];
        match report.thm1_bounds[k] {
            Some(b1) => println!(
                "{e},{sgd:.6},{b1:.6},{},{pswa:.6},{:.6},{}",
                if sgd <= b1 { "yes" } else { "no" },
                report.thm2_bound,
                if pswa <= report.thm2_bound { "yes" } else { "no" }
            ),
            // epoch 1 is the shared initial point: no completed epochs yet
            None => println!("{e},{sgd:.6},n/a,n/a,{pswa:.6},n/a,n/a"),
        }
    }
    println!(
        "stability: S_SGD={:.6} S_PSWA={:.6} pswa_more_stable={}",
        report.s_sgd,
        report.s_pswa,
        if report.pswa_more_stable { "yes" } else { "no" }
    );
    println!(
        "flags: sgd_within_bound={} pswa_within_bound={} pswa_more_stable={}",
        report.sgd_within_bound, report.pswa_within_bound, report.pswa_more_stable
    );
    if report.all_ok() {
        Ok(0)
    } else {
        Ok(3)
    }
}
