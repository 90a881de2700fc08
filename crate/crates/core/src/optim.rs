//! Gradient-update rules and learning-rate schedules.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterSet;
use crate::tensor::Tensor;

/// SGD with momentum and coupled L2 weight decay.
///
/// Velocity accumulates the (decay-adjusted) raw gradient and the update
/// subtracts `lr * v`:
///   g' = g + weight_decay * w;  v <- mu * v + g';  w <- w - lr * v
#[derive(Debug, Clone)]
pub struct SgdState {
    pub mu: f32,
    pub weight_decay: f32,
    velocity: IndexMap<String, Tensor>,
}

impl SgdState {
    pub fn new(mu: f32, weight_decay: f32) -> SgdState {
        SgdState {
            mu,
            weight_decay,
            velocity: IndexMap::new(),
        }
    }

    pub fn velocity(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_velocity(&mut self, name: &str, t: Tensor) {
        self.velocity.insert(name.to_string(), t);
    }
}

/// Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step_count: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl AdamState {
    pub fn new(beta1: f32, beta2: f32, eps: f32) -> AdamState {
        AdamState {
            beta1,
            beta2,
            eps,
            step_count: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.m
            .iter()
            .map(move |(k, m)| (k.as_str(), m, self.v.get(k).expect("paired moment")))
    }

    pub fn set_moments(&mut self, name: &str, m: Tensor, v: Tensor) {
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd(s) => sgd_step(params, s, lr as f32),
            Optimizer::Adam(s) => adam_step(params, s, lr as f32),
        }
    }
}

fn check_grad_finite(name: &str, grad: &Tensor) -> Result<()> {
    if grad.all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite gradient in {name}")))
    }
}

pub fn sgd_step(params: &mut ParameterSet, state: &mut SgdState, lr: f32) -> Result<()> {
    for (name, entry) in params.trainable_mut() {
        check_grad_finite(name, &entry.gradient)?;
        let v = state
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(entry.weight.shape()));
        for ((w, &g), vel) in entry
            .weight
            .data_mut()
            .iter_mut()
            .zip(entry.gradient.data())
            .zip(v.data_mut())
        {
            let g = g + state.weight_decay * *w;
            *vel = state.mu * *vel + g;
            *w -= lr * *vel;
        }
    }
    Ok(())
}

pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState, lr: f32) -> Result<()> {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, entry) in params.trainable_mut() {
        check_grad_finite(name, &entry.gradient)?;
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(entry.weight.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(entry.weight.shape()));
        for (((w, &g), m), v) in entry
            .weight
            .data_mut()
            .iter_mut()
            .zip(entry.gradient.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Learning-rate schedule, indexed by 0-based epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant {
        base_lr: f64,
    },
    /// Multiply by `gamma` at each milestone epoch.
    Step {
        base_lr: f64,
        milestones: Vec<usize>,
        gamma: f64,
    },
    /// base_lr * (1 - epoch/total)^power, clamped to 0 past `total`.
    Poly {
        base_lr: f64,
        power: f64,
        total_epochs: usize,
    },
}

impl LrSchedule {
    pub fn base_lr(&self) -> f64 {
        match self {
            LrSchedule::Constant { base_lr }
            | LrSchedule::Step { base_lr, .. }
            | LrSchedule::Poly { base_lr, .. } => *base_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr() <= 0.0 {
            return Err(Error::config("base_lr must be > 0"));
        }
        if let LrSchedule::Step { milestones, .. } = self {
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("step milestones must be strictly increasing"));
            }
        }
        if let LrSchedule::Poly { total_epochs, .. } = self {
            if *total_epochs == 0 {
                return Err(Error::config("poly schedule needs total_epochs >= 1"));
            }
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    match schedule {
        LrSchedule::Constant { base_lr } => *base_lr,
        LrSchedule::Step {
            base_lr,
            milestones,
            gamma,
        } => {
            let hits = milestones.iter().filter(|&&m| m <= epoch).count();
            base_lr * gamma.powi(hits as i32)
        }
        LrSchedule::Poly {
            base_lr,
            power,
            total_epochs,
        } => {
            if epoch >= *total_epochs {
                0.0
            } else {
                base_lr * (1.0 - epoch as f64 / *total_epochs as f64).powf(*power)
            }
        }
    }
}
