//! Empirical checks of the convex-case convergence bounds: projected
//! SGD vs. per-epoch weight averaging on a noisy quadratic, the two
//! closed-form bounds, and the stability comparison between them.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Convex objective f(w) = 0.5*||w - c||^2 with a noisy gradient oracle
/// g = (w - c) + xi, xi uniform on a sphere of radius `noise_radius`.
///
/// The domain is the Euclidean ball of radius D/2 centered on the
/// minimizer, so sup ||w - w'|| = D holds by construction, and
/// E||g||^2 <= (D/2)^2 + r^2 = G^2 exactly.
#[derive(Debug, Clone)]
pub struct ConvexProblem {
    dim: usize,
    diameter: f64,
    noise_radius: f64,
    center: Vec<f64>,
}

impl ConvexProblem {
    /// Quadratic with the minimizer at (D/2)*e1, so the zero vector sits
    /// on the domain boundary and serves as the initial point.
    pub fn noisy_quadratic(dim: usize, diameter: f64, noise_radius: f64) -> Result<ConvexProblem> {
        if dim == 0 || diameter <= 0.0 || noise_radius < 0.0 {
            return Err(Error::usage(format!(
                "invalid problem: dim={dim}, D={diameter}, r={noise_radius}"
            )));
        }
        let mut center = vec![0.0; dim];
        center[0] = diameter / 2.0;
        Ok(ConvexProblem {
            dim,
            diameter,
            noise_radius,
            center,
        })
    }

    /// Builds the instance from a target gradient bound G >= D/2 by
    /// solving G^2 = (D/2)^2 + r^2 for the noise radius.
    pub fn with_grad_bound(dim: usize, diameter: f64, grad_bound: f64) -> Result<ConvexProblem> {
        let half = diameter / 2.0;
        if grad_bound < half {
            return Err(Error::usage(format!(
                "gradient bound {grad_bound} below D/2 = {half}; unattainable on this domain"
            )));
        }
        let r = (grad_bound * grad_bound - half * half).sqrt();
        ConvexProblem::noisy_quadratic(dim, diameter, r)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn noise_radius(&self) -> f64 {
        self.noise_radius
    }

    /// Analytic gradient bound G = sqrt((D/2)^2 + r^2).
    pub fn grad_bound(&self) -> f64 {
        let half = self.diameter / 2.0;
        (half * half + self.noise_radius * self.noise_radius).sqrt()
    }

    pub fn optimum(&self) -> &[f64] {
        &self.center
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        0.5 * w
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    /// f(w) - f(w*); f* = 0 for this family.
    pub fn gap(&self, w: &[f64]) -> f64 {
        self.objective(w)
    }

    /// Zero vector: on the domain boundary.
    pub fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    /// Noisy subgradient: exact gradient plus uniform spherical noise.
    pub fn gradient(&self, w: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        if self.noise_radius > 0.0 {
            let xi: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let scale = self.noise_radius / norm;
                for (gi, x) in g.iter_mut().zip(&xi) {
                    *gi += x * scale;
                }
            }
        }
        g
    }

    /// Euclidean projection onto the ball of radius D/2 around the optimum.
    pub fn project(&self, w: &mut [f64]) {
        let radius = self.diameter / 2.0;
        let dist = w
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist > radius {
            let scale = radius / dist;
            for (wi, c) in w.iter_mut().zip(&self.center) {
                *wi = c + (*wi - c) * scale;
            }
        }
    }

    /// Monte-Carlo estimate of E||g||^2 at `w`.
    pub fn empirical_grad_sq(&self, w: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut total = 0.0;
        for _ in 0..samples {
            let g = self.gradient(w, rng);
            total += g.iter().map(|v| v * v).sum::<f64>();
        }
        total / samples as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexAlgorithm {
    /// Projected SGD, step 1/sqrt(t) with t global across epochs.
    Sgd,
    /// Constant step sqrt(D^2/(T*G^2)); each epoch starts from the mean
    /// of the previous epoch's iterates and the within-epoch mean resets.
    Pswa,
}

/// Optimality gap at the start of each epoch e = 1..=E. The first entry
/// is the initial point; entry e is the SGD last iterate / PSWA average
/// carried out of epoch e-1.
#[derive(Debug, Clone)]
pub struct RunGaps {
    pub gaps: Vec<f64>,
}

/// Runs one trajectory; `observer` sees every epoch-start weight as
/// (epoch, 0, w) and every in-epoch iterate as (epoch, t, w), epochs and
/// iterations 1-based.
pub fn projected_run_with(
    problem: &ConvexProblem,
    algorithm: ConvexAlgorithm,
    iters_per_epoch: usize,
    epochs: usize,
    seed: u64,
    mut observer: impl FnMut(usize, usize, &[f64]),
) -> Result<RunGaps> {
    if iters_per_epoch == 0 || epochs == 0 {
        return Err(Error::usage("run needs T >= 1 and E >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_per = iters_per_epoch;
    let mut w = problem.initial_point();
    let mut gaps = Vec::with_capacity(epochs);
    let d = problem.diameter();
    let g_bound = problem.grad_bound();
    let const_step = (d * d / (t_per as f64 * g_bound * g_bound)).sqrt();
    let mut global_t = 0u64;
    for epoch in 1..=epochs {
        observer(epoch, 0, &w);
        gaps.push(problem.gap(&w));
        let mut epoch_mean = vec![0.0; problem.dim()];
        for t in 1..=t_per {
            global_t += 1;
            let step = match algorithm {
                ConvexAlgorithm::Sgd => 1.0 / (global_t as f64).sqrt(),
                ConvexAlgorithm::Pswa => const_step,
            };
            let grad = problem.gradient(&w, &mut rng);
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= step * gi;
            }
            problem.project(&mut w);
            observer(epoch, t, &w);
            let inv = 1.0 / t as f64;
            for (m, wi) in epoch_mean.iter_mut().zip(&w) {
                *m = (1.0 - inv) * *m + inv * wi;
            }
        }
        if algorithm == ConvexAlgorithm::Pswa {
            w = epoch_mean;
        }
    }
    Ok(RunGaps { gaps })
}

pub fn projected_run(
    problem: &ConvexProblem,
    algorithm: ConvexAlgorithm,
    iters_per_epoch: usize,
    epochs: usize,
    seed: u64,
) -> Result<RunGaps> {
    projected_run_with(problem, algorithm, iters_per_epoch, epochs, seed, |_, _, _| {})
}

/// (D^2 + G^2) * (2 + ln(T(e-1))) / sqrt(T(e-1)) — last-iterate bound for
/// projected SGD at the start of epoch e (so after T(e-1) iterations).
pub fn theorem1_bound(
    diameter: f64,
    grad_bound: f64,
    iters_per_epoch: usize,
    epoch: usize,
) -> Result<f64> {
    if epoch < 2 {
        return Err(Error::usage("theorem-1 bound needs e >= 2"));
    }
    let n = (iters_per_epoch * (epoch - 1)) as f64;
    Ok((diameter * diameter + grad_bound * grad_bound) * (2.0 + n.ln()) / n.sqrt())
}

/// D*G/sqrt(T) — averaged-iterate bound with the constant step size;
/// independent of the epoch index.
pub fn theorem2_bound(diameter: f64, grad_bound: f64, iters_per_epoch: usize) -> f64 {
    diameter * grad_bound / (iters_per_epoch as f64).sqrt()
}

/// Monte-Carlo verification of both bounds plus the stability comparison.
///
/// Rows are indexed by epoch-start e = 1..=E. The bounds apply from e = 2
/// (the first epoch-start weight the algorithms have produced); row 1 is
/// the shared initial point and its bound entries are `None`.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub iters_per_epoch: usize,
    pub epochs: usize,
    pub runs: usize,
    /// Mean gap at the start of epoch e (index e-1).
    pub sgd_gaps: Vec<f64>,
    pub pswa_gaps: Vec<f64>,
    /// theorem-1 bound per epoch start; `None` where e < 2.
    pub thm1_bounds: Vec<Option<f64>>,
    pub thm2_bound: f64,
    /// Squared L2 norms of the mean-gap vectors over e = 1..=E.
    pub s_sgd: f64,
    pub s_pswa: f64,
    pub sgd_within_bound: bool,
    pub pswa_within_bound: bool,
    pub pswa_more_stable: bool,
}

impl StabilityReport {
    pub fn all_ok(&self) -> bool {
        self.sgd_within_bound && self.pswa_within_bound && self.pswa_more_stable
    }
}

/// Averages per-epoch gaps over `runs` independent trajectories (run r is
/// seeded `seed + r`) and checks them against the two bounds.
pub fn verify_stability(
    problem: &ConvexProblem,
    iters_per_epoch: usize,
    epochs: usize,
    runs: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if runs == 0 {
        return Err(Error::usage("verify_stability needs runs >= 1"));
    }
    let mut sgd_gaps = vec![0.0; epochs];
    let mut pswa_gaps = vec![0.0; epochs];
    for r in 0..runs {
        let run_seed = seed + r as u64;
        let s = projected_run(problem, ConvexAlgorithm::Sgd, iters_per_epoch, epochs, run_seed)?;
        let p = projected_run(problem, ConvexAlgorithm::Pswa, iters_per_epoch, epochs, run_seed)?;
        for e in 0..epochs {
            sgd_gaps[e] += s.gaps[e];
            pswa_gaps[e] += p.gaps[e];
        }
    }
    for e in 0..epochs {
        sgd_gaps[e] /= runs as f64;
        pswa_gaps[e] /= runs as f64;
    }
    let d = problem.diameter();
    let g = problem.grad_bound();
    let thm1_bounds: Vec<Option<f64>> = (1..=epochs)
        .map(|e| {
            if e >= 2 {
                theorem1_bound(d, g, iters_per_epoch, e).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let thm2 = theorem2_bound(d, g, iters_per_epoch);
    let sgd_within = sgd_gaps
        .iter()
        .zip(&thm1_bounds)
        .all(|(gap, b)| b.map_or(true, |b| *gap <= b));
    let pswa_within = pswa_gaps
        .iter()
        .enumerate()
        .all(|(k, gap)| k == 0 || *gap <= thm2);
    let s_sgd = sgd_gaps.iter().map(|v| v * v).sum::<f64>();
    let s_pswa = pswa_gaps.iter().map(|v| v * v).sum::<f64>();
    Ok(StabilityReport {
        iters_per_epoch,
        epochs,
        runs,
        sgd_gaps,
        pswa_gaps,
        thm1_bounds,
        thm2_bound: thm2,
        s_sgd,
        s_pswa,
        sgd_within_bound: sgd_within,
        pswa_within_bound: pswa_within,
        pswa_more_stable: s_pswa <= s_sgd,
    })
}
