//! Numerical gradient checking against central finite differences.
//!
//! The checker only ever calls the forward pass (on throwaway clones), so
//! it stays independent of the analytic backward path it validates.

use crate::error::Result;
use crate::nn::{cross_entropy, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step h.
    pub step: f32,
    /// Relative error threshold per coordinate.
    pub rel_tol: f64,
    /// Coordinates whose analytic gradient is below this magnitude are
    /// not held to `rel_tol`; the f32 difference quotient has a noise
    /// floor around 1e-5 so tiny gradients carry no signal. A gradient
    /// that is exactly zero by structure (conv bias under BN) lands here.
    pub min_magnitude: f64,
    /// A small-analytic coordinate whose numeric gradient exceeds this
    /// still fails: that is a missing gradient, not noise.
    pub missing_alarm: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            rel_tol: 1e-2,
            min_magnitude: 1e-6,
            missing_alarm: 5e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Coordinates compared against the tolerance.
    pub checked: usize,
    /// Coordinates within tolerance.
    pub passed: usize,
    /// Coordinates skipped for being below the magnitude floor.
    pub skipped: usize,
    pub worst_rel_err: f64,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

fn train_loss(base: &Model, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut model = base.clone();
    let (logits, _) = model.forward_train(batch)?;
    let (loss, _) = cross_entropy(&logits, labels)?;
    Ok(loss)
}

/// Checks every trainable coordinate of `model` on one batch of the
/// cross-entropy objective.
pub fn check_model_gradients(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    // Analytic gradients from one train-mode forward/backward.
    let mut analytic = model.clone();
    let (logits, cache) = analytic.forward_train(batch)?;
    let (_, dlogits) = cross_entropy(&logits, labels)?;
    analytic.backward(&cache, &dlogits)?;

    let names: Vec<String> = model
        .params()
        .trainable()
        .map(|(n, _)| n.to_string())
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        passed: 0,
        skipped: 0,
        worst_rel_err: 0.0,
    };
    let h = cfg.step;
    for name in &names {
        let len = model.params().get(name).unwrap().weight.len();
        for idx in 0..len {
            let grad_an = analytic.params().get(name).unwrap().gradient.data()[idx] as f64;

            let mut plus = model.clone();
            plus.params_mut().get_mut(name).unwrap().weight.data_mut()[idx] += h;
            let lp = train_loss(&plus, batch, labels)?;

            let mut minus = model.clone();
            minus.params_mut().get_mut(name).unwrap().weight.data_mut()[idx] -= h;
            let lm = train_loss(&minus, batch, labels)?;

            let grad_fd = (lp - lm) / (2.0 * h as f64);
            if grad_an.abs() <= cfg.min_magnitude {
                if grad_fd.abs() > cfg.missing_alarm {
                    // analytic says ~0 while the loss clearly moves
                    report.checked += 1;
                    report.worst_rel_err = f64::INFINITY;
                } else {
                    report.skipped += 1;
                }
                continue;
            }
            let mag = grad_an.abs().max(grad_fd.abs());
            let rel = (grad_an - grad_fd).abs() / mag;
            report.checked += 1;
            if rel <= cfg.rel_tol {
                report.passed += 1;
            }
            if rel > report.worst_rel_err {
                report.worst_rel_err = rel;
            }
        }
    }
    Ok(report)
}
