//! Loss-surface diagnostics: filter-normalized 1-D scans along random
//! directions and linear interpolation between two checkpoints.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::evaluate;
use crate::nn::Model;
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Per-parameter displacement tensors aligned with a model's trainable
/// weights. Rank-1 parameters (biases, BN gamma/beta) carry zero
/// displacement, and BN running statistics are not touched at all.
#[derive(Debug, Clone)]
pub struct Direction {
    components: IndexMap<String, Tensor>,
}

impl Direction {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.components.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.components.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Standard-normal direction for every trainable tensor of rank >= 2;
/// rank-1 parameters get zeros.
pub fn sample_direction(model: &Model, seed: u64) -> Direction {
    let mut rng = stream(seed, Purpose::Direction, 0);
    let mut components = IndexMap::new();
    for (name, entry) in model.params().trainable() {
        let mut d = Tensor::zeros(entry.weight.shape());
        if entry.weight.shape().len() >= 2 {
            d.data_mut().iter_mut().for_each(|v| {
                let z: f64 = rng.sample(StandardNormal);
                *v = z as f32;
            });
        }
        components.insert(name.to_string(), d);
    }
    Direction { components }
}

/// Rescales each output-group of the direction (filters for conv, rows
/// for dense) to the norm of the matching weight group:
/// d_g <- d_g * ||w_g|| / ||d_g||. Zero-norm weight groups zero the
/// direction group.
pub fn filter_normalize(direction: &mut Direction, model: &Model) -> Result<()> {
    for (name, d) in direction.components.iter_mut() {
        let entry = model
            .params()
            .get(name)
            .ok_or_else(|| Error::usage(format!("direction has unknown parameter '{name}'")))?;
        if entry.weight.shape() != d.shape() {
            return Err(Error::usage(format!(
                "direction shape mismatch for '{name}'"
            )));
        }
        let shape = d.shape();
        if shape.len() < 2 {
            continue;
        }
        let groups = shape[0];
        let group_len: usize = shape[1..].iter().product();
        for g in 0..groups {
            let lo = g * group_len;
            let hi = lo + group_len;
            let w_norm = entry.weight.data()[lo..hi]
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            let d_norm = d.data()[lo..hi]
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            let slice = &mut d.data_mut()[lo..hi];
            if w_norm == 0.0 || d_norm == 0.0 {
                slice.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let scale = (w_norm / d_norm) as f32;
                slice.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    Ok(())
}

/// Loss/accuracy curves over a displacement grid.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub lambdas: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub test_acc: Vec<f64>,
}

/// Uniform grid of `points` values over [min, max]. The point closest to
/// zero is snapped to exactly 0 so every scan contains the unperturbed
/// model.
pub fn lambda_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(min < max) {
        return Err(Error::usage(format!(
            "invalid grid: {points} points over [{min}, {max}]"
        )));
    }
    if min > 0.0 || max < 0.0 {
        return Err(Error::usage("grid must contain 0"));
    }
    let step = (max - min) / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|i| min + i as f64 * step).collect();
    let nearest = grid
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    grid[nearest] = 0.0;
    Ok(grid)
}

// Non-finite activations surface as numeric errors; a scan records the
// point as +inf loss / 0 accuracy and keeps going.
fn eval_or_inf(model: &Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    match evaluate(model, data, batch_size) {
        Ok(pair) => Ok(pair),
        Err(Error::Numeric(_)) => Ok((f64::INFINITY, 0.0)),
        Err(e) => Err(e),
    }
}

/// Evaluates w + lambda*d over the grid in BN eval mode with frozen
/// running statistics. The model is restored bit-exactly afterwards.
pub fn scan_1d(
    model: &mut Model,
    train: &Dataset,
    test: &Dataset,
    direction: &Direction,
    lambdas: &[f64],
    batch_size: usize,
) -> Result<ScanResult> {
    if !lambdas.contains(&0.0) {
        return Err(Error::usage("scan grid must contain 0"));
    }
    for (name, d) in direction.iter() {
        let entry = model
            .params()
            .get(name)
            .ok_or_else(|| Error::usage(format!("direction has unknown parameter '{name}'")))?;
        if entry.weight.shape() != d.shape() {
            return Err(Error::usage(format!(
                "direction shape mismatch for '{name}'"
            )));
        }
    }
    let base = model.params().clone();
    let mut result = ScanResult {
        lambdas: lambdas.to_vec(),
        train_loss: Vec::with_capacity(lambdas.len()),
        train_acc: Vec::with_capacity(lambdas.len()),
        test_loss: Vec::with_capacity(lambdas.len()),
        test_acc: Vec::with_capacity(lambdas.len()),
    };
    for &lambda in lambdas {
        if lambda != 0.0 {
            for (name, d) in direction.iter() {
                let baseline = &base.get(name).unwrap().weight;
                let entry = model.params_mut().get_mut(name).unwrap();
                for ((w, &b), &dv) in entry
                    .weight
                    .data_mut()
                    .iter_mut()
                    .zip(baseline.data())
                    .zip(d.data())
                {
                    *w = b + lambda as f32 * dv;
                }
            }
        }
        let (trl, tra) = eval_or_inf(model, train, batch_size)?;
        let (tel, tea) = eval_or_inf(model, test, batch_size)?;
        result.train_loss.push(trl);
        result.train_acc.push(tra);
        result.test_loss.push(tel);
        result.test_acc.push(tea);
        if lambda != 0.0 {
            for (name, _) in direction.iter() {
                let baseline = base.get(name).unwrap().weight.clone();
                model.params_mut().get_mut(name).unwrap().weight = baseline;
            }
        }
    }
    *model.params_mut() = base;
    Ok(result)
}

/// Evaluates (1-lambda)*a + lambda*b over the grid; every parameter,
/// including BN running statistics, is interpolated. The blend is
/// computed in f64 so lambda = 0.5 is the correctly rounded mean.
pub fn interpolate(
    model_a: &Model,
    model_b: &Model,
    train: &Dataset,
    test: &Dataset,
    lambdas: &[f64],
    batch_size: usize,
) -> Result<ScanResult> {
    if model_a.spec() != model_b.spec() {
        return Err(Error::usage("interpolation needs identical architectures"));
    }
    let mut work = model_a.clone();
    let mut result = ScanResult {
        lambdas: lambdas.to_vec(),
        train_loss: Vec::with_capacity(lambdas.len()),
        train_acc: Vec::with_capacity(lambdas.len()),
        test_loss: Vec::with_capacity(lambdas.len()),
        test_acc: Vec::with_capacity(lambdas.len()),
    };
    for &lambda in lambdas {
        let names: Vec<String> = model_a.params().iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let a = &model_a.params().get(name).unwrap().weight;
            let b = &model_b.params().get(name).unwrap().weight;
            let entry = work.params_mut().get_mut(name).unwrap();
            if lambda == 0.0 {
                entry.weight = a.clone();
            } else if lambda == 1.0 {
                entry.weight = b.clone();
            } else {
                for ((w, &av), &bv) in entry
                    .weight
                    .data_mut()
                    .iter_mut()
                    .zip(a.data())
                    .zip(b.data())
                {
                    *w = ((1.0 - lambda) * av as f64 + lambda * bv as f64) as f32;
                }
            }
        }
        let (trl, tra) = eval_or_inf(&work, train, batch_size)?;
        let (tel, tea) = eval_or_inf(&work, test, batch_size)?;
        result.train_loss.push(trl);
        result.train_acc.push(tra);
        result.test_loss.push(tel);
        result.test_acc.push(tea);
    }
    Ok(result)
}
