//! Weight sampling over batchwise updates: running-mean accumulators, the
//! PSWA / PWALKS / PSWM strategies, the SWA / BachEpoch / BachBatch
//! baselines, and batch-norm recalibration.
//!
//! Accumulator buffers are kept in f64 so the online means stay well
//! inside the 1e-6 oracle tolerance; a single accumulated snapshot round
//! trips f32 -> f64 -> f32 bit-exactly, which the reduction identities
//! rely on.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Model, ParameterSet, StatsCollector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    None,
    Pswa,
    Pwalks,
    Pswm,
    Swa,
    BachEpoch,
    BachBatch,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Pswa => "pswa",
            Strategy::Pwalks => "pwalks",
            Strategy::Pswm => "pswm",
            Strategy::Swa => "swa",
            Strategy::BachEpoch => "bachepoch",
            Strategy::BachBatch => "bachbatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PswmVariant {
    /// mean <- (1-m)*mean + m*w, seeded with the first snapshot.
    /// m = 1 reduces to plain SGD (the mean is always the latest weights).
    Ema,
    /// mean <- (1-m)*((i-1)/i)*mean + m*(w/i). Kept for comparison; at
    /// m = 1 this yields w_b/b rather than w_b.
    Literal,
}

/// Strategy selector plus hyperparameters. Fields irrelevant to the
/// selected strategy keep their defaults and are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Fraction of batches sampled per epoch (pswa).
    pub alpha: f64,
    /// Fraction of training data used for BN recalibration.
    pub beta: f64,
    /// Percent of trailing batches sampled (pwalks).
    pub k: f64,
    /// Momentum blend (pswm).
    pub m: f64,
    /// Reassignment cadence in epochs (swa).
    pub c: usize,
    pub pswm_variant: PswmVariant,
}

impl SamplerConfig {
    pub fn new(strategy: Strategy) -> SamplerConfig {
        SamplerConfig {
            strategy,
            alpha: 1.0,
            beta: 0.1,
            k: 2.0,
            m: 0.5,
            c: 1,
            pswm_variant: PswmVariant::Ema,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("sampler alpha {} outside (0,1]", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config(format!("sampler beta {} outside (0,1]", self.beta)));
        }
        if !(self.k > 0.0 && self.k <= 100.0) {
            return Err(Error::config(format!("sampler k {} outside (0,100]", self.k)));
        }
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(Error::config(format!("sampler m {} outside (0,1]", self.m)));
        }
        if self.c == 0 {
            return Err(Error::config("sampler c must be >= 1"));
        }
        Ok(())
    }
}

/// Running-mean buffers over weight snapshots (Eq.-style online mean:
/// count i <- i+1; mean <- ((i-1)/i)*mean + w/i).
#[derive(Debug, Clone)]
pub struct WeightAccumulator {
    buffers: IndexMap<String, Vec<f64>>,
    count: u64,
}

impl WeightAccumulator {
    /// Zeroed buffers mirroring the trainable entries of `params`.
    pub fn new(params: &ParameterSet) -> WeightAccumulator {
        let buffers = params
            .trainable()
            .map(|(n, e)| (n.to_string(), vec![0.0f64; e.weight.len()]))
            .collect();
        WeightAccumulator { buffers, count: 0 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn reset(&mut self) {
        self.count = 0;
        for buf in self.buffers.values_mut() {
            buf.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn mean(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(|v| v.as_slice())
    }

    fn check_matches(&self, params: &ParameterSet) -> Result<()> {
        let mut trainable = 0usize;
        for (name, entry) in params.trainable() {
            trainable += 1;
            match self.buffers.get(name) {
                Some(buf) if buf.len() == entry.weight.len() => {}
                _ => {
                    return Err(Error::usage(format!(
                        "accumulator does not match parameter {name}"
                    )))
                }
            }
        }
        if trainable != self.buffers.len() {
            return Err(Error::usage("accumulator tracks a different parameter set"));
        }
        Ok(())
    }

    /// Online arithmetic mean update with the current trainable weights.
    pub fn accumulate(&mut self, params: &ParameterSet) -> Result<()> {
        self.check_matches(params)?;
        let i = (self.count + 1) as f64;
        let keep = (i - 1.0) / i;
        for (name, entry) in params.trainable() {
            let buf = self.buffers.get_mut(name).unwrap();
            for (b, &v) in buf.iter_mut().zip(entry.weight.data()) {
                *b = keep * *b + (v as f64) / i;
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Momentum-blend update (pswm). `Ema` seeds the mean with the first
    /// snapshot; `Literal` applies the count-scaled blend from zero.
    pub fn pswm_update(
        &mut self,
        params: &ParameterSet,
        m: f64,
        variant: PswmVariant,
    ) -> Result<()> {
        self.check_matches(params)?;
        let i = (self.count + 1) as f64;
        for (name, entry) in params.trainable() {
            let buf = self.buffers.get_mut(name).unwrap();
            match variant {
                PswmVariant::Ema if self.count == 0 => {
                    for (b, &v) in buf.iter_mut().zip(entry.weight.data()) {
                        *b = v as f64;
                    }
                }
                PswmVariant::Ema => {
                    for (b, &v) in buf.iter_mut().zip(entry.weight.data()) {
                        *b = (1.0 - m) * *b + m * v as f64;
                    }
                }
                PswmVariant::Literal => {
                    let keep = (1.0 - m) * (i - 1.0) / i;
                    for (b, &v) in buf.iter_mut().zip(entry.weight.data()) {
                        *b = keep * *b + m * (v as f64) / i;
                    }
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Overwrites every trainable weight with the accumulated mean.
    /// Optimizer state and BN running statistics are untouched.
    pub fn reassign(&self, params: &mut ParameterSet) -> Result<()> {
        if self.count == 0 {
            return Err(Error::usage("reassign with empty accumulator (nothing sampled)"));
        }
        for (name, entry) in params.trainable_mut() {
            let buf = self.buffers.get(name).ok_or_else(|| {
                Error::usage(format!("accumulator does not match parameter {name}"))
            })?;
            for (w, &b) in entry.weight.data_mut().iter_mut().zip(buf) {
                *w = b as f32;
            }
        }
        Ok(())
    }
}

/// Weighted running mean for the cross-epoch baselines. Never reset.
#[derive(Debug, Clone)]
pub struct WeightedAccumulator {
    buffers: IndexMap<String, Vec<f64>>,
    total_weight: f64,
    samples: u64,
}

impl WeightedAccumulator {
    pub fn new(params: &ParameterSet) -> WeightedAccumulator {
        let buffers = params
            .trainable()
            .map(|(n, e)| (n.to_string(), vec![0.0f64; e.weight.len()]))
            .collect();
        WeightedAccumulator {
            buffers,
            total_weight: 0.0,
            samples: 0,
        }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn accumulate(&mut self, params: &ParameterSet, weight: f64) -> Result<()> {
        debug_assert!(weight > 0.0);
        let new_total = self.total_weight + weight;
        let keep = self.total_weight / new_total;
        let take = weight / new_total;
        for (name, entry) in params.trainable() {
            let buf = self.buffers.get_mut(name).ok_or_else(|| {
                Error::usage(format!("accumulator does not match parameter {name}"))
            })?;
            if buf.len() != entry.weight.len() {
                return Err(Error::usage(format!(
                    "accumulator does not match parameter {name}"
                )));
            }
            for (b, &v) in buf.iter_mut().zip(entry.weight.data()) {
                *b = keep * *b + take * v as f64;
            }
        }
        self.total_weight = new_total;
        self.samples += 1;
        Ok(())
    }

    pub fn mean(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(|v| v.as_slice())
    }

    pub fn reassign(&self, params: &mut ParameterSet) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::usage("reassign with empty accumulator (nothing sampled)"));
        }
        for (name, entry) in params.trainable_mut() {
            let buf = self.buffers.get(name).ok_or_else(|| {
                Error::usage(format!("accumulator does not match parameter {name}"))
            })?;
            for (w, &b) in entry.weight.data_mut().iter_mut().zip(buf) {
                *w = b as f32;
            }
        }
        Ok(())
    }
}

/// Persistent state for swa / bachepoch / bachbatch: one never-reset mean
/// plus the global batch counter.
#[derive(Debug, Clone)]
pub struct CrossEpochState {
    pub mean: WeightedAccumulator,
    pub global_batch: u64,
}

/// Which 1-based batch indices of an epoch get sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochPlan {
    NoSampling,
    EveryBatch,
    /// Sample every i >= first (pwalks gate i > b*(1-k/100)).
    Tail { first: usize },
    /// Sample i = b - offset - j*stride for j in 0..n (pswa).
    Strided {
        b: usize,
        offset: usize,
        stride: usize,
        n: usize,
    },
}

impl EpochPlan {
    pub fn should_sample(&self, i: usize) -> bool {
        match *self {
            EpochPlan::NoSampling => false,
            EpochPlan::EveryBatch => true,
            EpochPlan::Tail { first } => i >= first,
            EpochPlan::Strided {
                b,
                offset,
                stride,
                n,
            } => {
                let top = b - offset;
                if i > top {
                    return false;
                }
                let d = top - i;
                d % stride == 0 && d / stride < n
            }
        }
    }

    /// How many batches out of `b` the plan admits.
    pub fn sample_count(&self, b: usize) -> usize {
        (1..=b).filter(|&i| self.should_sample(i)).count()
    }
}

/// Number of batches a pswa epoch samples: ceil(alpha * b).
pub fn pswa_sample_count(alpha: f64, b: usize) -> usize {
    ((alpha * b as f64).ceil() as usize).clamp(1, b)
}

/// Number of batches a pwalks epoch samples: ceil((k/100) * b).
pub fn pwalks_sample_count(k: f64, b: usize) -> usize {
    ((k * b as f64 / 100.0).ceil() as usize).clamp(1, b)
}

/// Builds the per-epoch sampling plan. For pswa the sampled set is an
/// evenly strided grid anchored at the last batch, shifted back by a
/// random phase in [0, stride); a single-sample grid has no phase and
/// lands on the last batch, which also makes pswa with one sampled batch
/// coincide with the pwalks single-batch gate.
pub fn epoch_plan(cfg: &SamplerConfig, b: usize, rng: &mut ChaCha8Rng) -> EpochPlan {
    match cfg.strategy {
        Strategy::None | Strategy::Swa | Strategy::BachEpoch => EpochPlan::NoSampling,
        Strategy::Pswm | Strategy::BachBatch => EpochPlan::EveryBatch,
        Strategy::Pwalks => {
            let n = pwalks_sample_count(cfg.k, b);
            EpochPlan::Tail { first: b - n + 1 }
        }
        Strategy::Pswa => {
            let n = pswa_sample_count(cfg.alpha, b);
            if n >= b {
                EpochPlan::EveryBatch
            } else if n == 1 {
                EpochPlan::Tail { first: b }
            } else {
                let stride = b / n;
                let offset = rng.gen_range(0..stride);
                EpochPlan::Strided {
                    b,
                    offset,
                    stride,
                    n,
                }
            }
        }
    }
}

/// Recomputes every BN layer's running statistics from exact aggregate
/// activation statistics over a strided beta-fraction subset of
/// `train_data`, visited in collect-stats forward mode. Trainable weights
/// are untouched; models without BN layers are a no-op.
pub fn bn_recalibrate(
    model: &mut Model,
    train_data: &Dataset,
    beta: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config(format!("recalibration beta {beta} outside (0,1]")));
    }
    if !model.has_batchnorm() {
        return Ok(());
    }
    let n = train_data.len();
    let subset = ((beta * n as f64).ceil() as usize).min(n);
    if subset == 0 {
        return Err(Error::usage("recalibration subset is empty"));
    }
    let indices: Vec<usize> = if subset >= n {
        (0..n).collect()
    } else {
        let stride = n / subset;
        let offset = rng.gen_range(0..stride);
        (0..subset).map(|j| offset + j * stride).collect()
    };
    let mut collector = StatsCollector::new();
    let bs = batch_size.max(1);
    for chunk in indices.chunks(bs) {
        let (x, _) = train_data.gather(chunk);
        model.forward_collect(&x, &mut collector)?;
    }
    for (layer, stats) in collector.layers() {
        let count = stats.count as f64;
        let mean_name = format!("layer{layer}.running_mean");
        let var_name = format!("layer{layer}.running_var");
        {
            let rm = model
                .params_mut()
                .get_mut(&mean_name)
                .ok_or_else(|| Error::usage(format!("missing {mean_name}")))?;
            for (w, &s) in rm.weight.data_mut().iter_mut().zip(&stats.sum) {
                *w = (s / count) as f32;
            }
        }
        let means: Vec<f64> = stats.sum.iter().map(|&s| s / count).collect();
        let rv = model
            .params_mut()
            .get_mut(&var_name)
            .ok_or_else(|| Error::usage(format!("missing {var_name}")))?;
        for ((w, &sq), mu) in rv.weight.data_mut().iter_mut().zip(&stats.sumsq).zip(means) {
            *w = ((sq / count) - mu * mu).max(0.0) as f32;
        }
    }
    Ok(())
}

/// End-of-epoch actions, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookAction {
    UpdateCrossEpochMean,
    Reassign,
    Recalibrate,
    ResetAccumulator,
}

#[derive(Debug, Clone, Default)]
pub struct EpochHookReport {
    pub actions: Vec<HookAction>,
    /// Seconds spent on weight sampling work (mean updates + reassignment).
    pub sample_seconds: f64,
    /// Seconds spent recalibrating BN statistics.
    pub recal_seconds: f64,
}

/// Drives one strategy across a training run: per-batch accumulation plus
/// the end-of-epoch hook (reassign -> recalibrate -> reset).
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    acc: WeightAccumulator,
    cross: CrossEpochState,
    plan: EpochPlan,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig, params: &ParameterSet) -> Sampler {
        Sampler {
            cfg,
            acc: WeightAccumulator::new(params),
            cross: CrossEpochState {
                mean: WeightedAccumulator::new(params),
                global_batch: 0,
            },
            plan: EpochPlan::NoSampling,
        }
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn accumulator(&self) -> &WeightAccumulator {
        &self.acc
    }

    pub fn cross_epoch(&self) -> &CrossEpochState {
        &self.cross
    }

    pub fn plan(&self) -> &EpochPlan {
        &self.plan
    }

    /// Draws the epoch's sampling plan. The per-epoch accumulator carries
    /// no state across epochs (it is reset by the hook), the cross-epoch
    /// state persists.
    pub fn begin_epoch(&mut self, b: usize, rng: &mut ChaCha8Rng) {
        self.plan = epoch_plan(&self.cfg, b, rng);
    }

    /// Called after every optimizer step with the 1-based batch index.
    /// Returns whether the batch was sampled.
    pub fn on_batch_end(&mut self, i: usize, params: &ParameterSet) -> Result<bool> {
        if self.cfg.strategy == Strategy::BachBatch {
            self.cross.global_batch += 1;
        }
        if !self.plan.should_sample(i) {
            return Ok(false);
        }
        match self.cfg.strategy {
            Strategy::Pswa | Strategy::Pwalks => self.acc.accumulate(params)?,
            Strategy::Pswm => self
                .acc
                .pswm_update(params, self.cfg.m, self.cfg.pswm_variant)?,
            Strategy::BachBatch => self
                .cross
                .mean
                .accumulate(params, self.cross.global_batch as f64)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// End-of-epoch hook. `epoch` is 0-based; weighted baselines use the
    /// 1-based epoch value as their weight.
    pub fn end_epoch(
        &mut self,
        model: &mut Model,
        train_data: &Dataset,
        batch_size: usize,
        epoch: usize,
        recal_rng: &mut ChaCha8Rng,
    ) -> Result<EpochHookReport> {
        let mut report = EpochHookReport::default();
        let beta = self.cfg.beta;
        match self.cfg.strategy {
            Strategy::None => {}
            Strategy::Pswa | Strategy::Pwalks | Strategy::Pswm => {
                let t = Instant::now();
                self.acc.reassign(model.params_mut())?;
                report.sample_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::Reassign);

                let t = Instant::now();
                bn_recalibrate(model, train_data, beta, batch_size, recal_rng)?;
                report.recal_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::Recalibrate);

                let t = Instant::now();
                self.acc.reset();
                report.sample_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::ResetAccumulator);
            }
            Strategy::Swa => {
                let t = Instant::now();
                self.cross.mean.accumulate(model.params(), 1.0)?;
                report.sample_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::UpdateCrossEpochMean);
                if (epoch + 1) % self.cfg.c == 0 {
                    let t = Instant::now();
                    self.cross.mean.reassign(model.params_mut())?;
                    report.sample_seconds += t.elapsed().as_secs_f64();
                    report.actions.push(HookAction::Reassign);

                    let t = Instant::now();
                    bn_recalibrate(model, train_data, beta, batch_size, recal_rng)?;
                    report.recal_seconds += t.elapsed().as_secs_f64();
                    report.actions.push(HookAction::Recalibrate);
                }
            }
            Strategy::BachEpoch => {
                let t = Instant::now();
                self.cross
                    .mean
                    .accumulate(model.params(), (epoch + 1) as f64)?;
                self.cross.mean.reassign(model.params_mut())?;
                report.sample_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::UpdateCrossEpochMean);
                report.actions.push(HookAction::Reassign);

                let t = Instant::now();
                bn_recalibrate(model, train_data, beta, batch_size, recal_rng)?;
                report.recal_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::Recalibrate);
            }
            Strategy::BachBatch => {
                let t = Instant::now();
                self.cross.mean.reassign(model.params_mut())?;
                report.sample_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::Reassign);

                let t = Instant::now();
                bn_recalibrate(model, train_data, beta, batch_size, recal_rng)?;
                report.recal_seconds += t.elapsed().as_secs_f64();
                report.actions.push(HookAction::Recalibrate);
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, ModelSpec, ParamKind};
    use crate::rng::{stream, Purpose};
    use crate::tensor::Tensor;

    fn scalar_params(w: f32) -> ParameterSet {
        let mut p = ParameterSet::default();
        p.insert("w", Tensor::from_vec(&[1], vec![w]).unwrap(), ParamKind::Trainable);
        p
    }

    fn set_scalar(p: &mut ParameterSet, w: f32) {
        p.get_mut("w").unwrap().weight.data_mut()[0] = w;
    }

    fn rng() -> ChaCha8Rng {
        stream(0, Purpose::SamplePhase, 0)
    }

    #[test]
    fn reset_zeroes_and_is_idempotent() {
        let p = scalar_params(2.0);
        let mut acc = WeightAccumulator::new(&p);
        acc.accumulate(&p).unwrap();
        acc.reset();
        assert_eq!(acc.count(), 0);
        assert_eq!(acc.mean("w").unwrap(), &[0.0]);
        acc.reset();
        assert_eq!(acc.count(), 0);
        acc.accumulate(&p).unwrap();
        assert_eq!(acc.mean("w").unwrap(), &[2.0]);
    }

    #[test]
    fn online_mean_matches_arithmetic_mean() {
        let mut p = scalar_params(2.0);
        let mut acc = WeightAccumulator::new(&p);
        for w in [2.0, 4.0, 6.0] {
            set_scalar(&mut p, w);
            acc.accumulate(&p).unwrap();
        }
        assert_eq!(acc.count(), 3);
        assert!((acc.mean("w").unwrap()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn online_mean_matches_stored_snapshot_oracle() {
        let mut g = stream(42, Purpose::Dataset, 0);
        let mut p = scalar_params(0.0);
        let mut acc = WeightAccumulator::new(&p);
        let mut snapshots = Vec::new();
        for _ in 0..1000 {
            let w: f32 = g.gen_range(-5.0..5.0);
            set_scalar(&mut p, w);
            acc.accumulate(&p).unwrap();
            snapshots.push(w as f64);
        }
        let oracle = snapshots.iter().sum::<f64>() / snapshots.len() as f64;
        let got = acc.mean("w").unwrap()[0];
        assert!(
            (got - oracle).abs() <= 1e-6 * oracle.abs().max(1.0),
            "got {got}, oracle {oracle}"
        );
    }

    #[test]
    fn accumulate_shape_mismatch_is_usage_error() {
        let p = scalar_params(1.0);
        let mut acc = WeightAccumulator::new(&p);
        let mut other = ParameterSet::default();
        other.insert("w", Tensor::zeros(&[2]), ParamKind::Trainable);
        assert!(matches!(acc.accumulate(&other), Err(Error::Usage(_))));
    }

    #[test]
    fn pwalks_small_k_samples_only_last_batch() {
        let cfg = SamplerConfig {
            k: 2.0,
            ..SamplerConfig::new(Strategy::Pwalks)
        };
        let plan = epoch_plan(&cfg, 50, &mut rng());
        for i in 1..=49 {
            assert!(!plan.should_sample(i), "batch {i}");
        }
        assert!(plan.should_sample(50));
    }

    #[test]
    fn pwalks_k_100_samples_every_batch() {
        let cfg = SamplerConfig {
            k: 100.0,
            ..SamplerConfig::new(Strategy::Pwalks)
        };
        let plan = epoch_plan(&cfg, 100, &mut rng());
        assert_eq!(plan.sample_count(100), 100);
    }

    #[test]
    fn pswa_tenth_alpha_gives_ten_strided_samples() {
        let cfg = SamplerConfig {
            alpha: 0.1,
            ..SamplerConfig::new(Strategy::Pswa)
        };
        for trial in 0..5 {
            let mut r = stream(trial, Purpose::SamplePhase, 0);
            let plan = epoch_plan(&cfg, 100, &mut r);
            let picked: Vec<usize> = (1..=100).filter(|&i| plan.should_sample(i)).collect();
            assert_eq!(picked.len(), 10, "{picked:?}");
            for w in picked.windows(2) {
                assert_eq!(w[1] - w[0], 10, "{picked:?}");
            }
        }
    }

    #[test]
    fn sample_counts_are_exact() {
        for &(alpha, b) in &[(0.1, 100), (0.37, 53), (1.0, 20), (0.01, 7), (0.5, 9)] {
            let cfg = SamplerConfig {
                alpha,
                ..SamplerConfig::new(Strategy::Pswa)
            };
            let plan = epoch_plan(&cfg, b, &mut rng());
            assert_eq!(
                plan.sample_count(b),
                pswa_sample_count(alpha, b),
                "alpha={alpha} b={b}"
            );
        }
        for &(k, b) in &[(2.0, 50), (2.0, 100), (5.0, 33), (100.0, 12), (60.0, 9)] {
            let cfg = SamplerConfig {
                k,
                ..SamplerConfig::new(Strategy::Pwalks)
            };
            let plan = epoch_plan(&cfg, b, &mut rng());
            assert_eq!(
                plan.sample_count(b),
                pwalks_sample_count(k, b),
                "k={k} b={b}"
            );
        }
    }

    #[test]
    fn pswa_single_sample_lands_on_last_batch() {
        let cfg = SamplerConfig {
            alpha: 0.01,
            ..SamplerConfig::new(Strategy::Pswa)
        };
        let plan = epoch_plan(&cfg, 20, &mut rng());
        assert_eq!(plan, EpochPlan::Tail { first: 20 });
    }

    #[test]
    fn pswm_ema_m1_tracks_last_snapshot() {
        let mut p = scalar_params(0.0);
        let mut acc = WeightAccumulator::new(&p);
        for w in [1.0, -2.0, 7.5] {
            set_scalar(&mut p, w);
            acc.pswm_update(&p, 1.0, PswmVariant::Ema).unwrap();
        }
        assert_eq!(acc.mean("w").unwrap()[0], 7.5);
    }

    #[test]
    fn pswm_ema_half_blends() {
        let mut p = scalar_params(0.0);
        let mut acc = WeightAccumulator::new(&p);
        acc.pswm_update(&p, 0.5, PswmVariant::Ema).unwrap();
        set_scalar(&mut p, 4.0);
        acc.pswm_update(&p, 0.5, PswmVariant::Ema).unwrap();
        assert_eq!(acc.mean("w").unwrap()[0], 2.0);
    }

    #[test]
    fn pswm_literal_m1_yields_last_over_count() {
        let mut p = scalar_params(0.0);
        let mut acc = WeightAccumulator::new(&p);
        let snapshots = [3.0f32, 5.0, 8.0, 4.0];
        for w in snapshots {
            set_scalar(&mut p, w);
            acc.pswm_update(&p, 1.0, PswmVariant::Literal).unwrap();
        }
        let b = snapshots.len() as f64;
        let expect = snapshots[snapshots.len() - 1] as f64 / b;
        assert!((acc.mean("w").unwrap()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn reassign_requires_samples_and_preserves_equal_weights() {
        let mut p = scalar_params(3.25);
        let mut acc = WeightAccumulator::new(&p);
        assert!(matches!(
            acc.reassign(&mut p),
            Err(Error::Usage(_))
        ));
        acc.accumulate(&p).unwrap();
        let before = p.get("w").unwrap().weight.clone();
        acc.reassign(&mut p).unwrap();
        assert!(p.get("w").unwrap().weight.bit_eq(&before));
    }

    #[test]
    fn weighted_mean_matches_hand_computation() {
        let mut p = scalar_params(1.0);
        let mut acc = WeightedAccumulator::new(&p);
        acc.accumulate(&p, 1.0).unwrap();
        set_scalar(&mut p, 4.0);
        acc.accumulate(&p, 2.0).unwrap();
        // (1*1 + 2*4) / 3 = 3
        assert!((acc.mean("w").unwrap()[0] - 3.0).abs() < 1e-12);
    }

    fn bn_model() -> Model {
        let spec = ModelSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::batchnorm(1)],
        };
        Model::new(spec, &mut stream(0, Purpose::Init, 0)).unwrap()
    }

    fn dataset_from(values: &[f32]) -> Dataset {
        Dataset {
            inputs: Tensor::from_vec(&[values.len(), 1], values.to_vec()).unwrap(),
            labels: vec![0; values.len()],
            class_count: 2,
        }
    }

    #[test]
    fn recalibrate_constant_inputs() {
        let mut model = bn_model();
        let data = dataset_from(&[3.0, 3.0, 3.0, 3.0]);
        bn_recalibrate(&mut model, &data, 1.0, 2, &mut stream(0, Purpose::RecalPhase, 0)).unwrap();
        assert_eq!(
            model.params().get("layer0.running_mean").unwrap().weight.data(),
            &[3.0]
        );
        assert_eq!(
            model.params().get("layer0.running_var").unwrap().weight.data(),
            &[0.0]
        );
    }

    #[test]
    fn recalibrate_without_bn_is_noop() {
        let spec = ModelSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::Dense { in_dim: 1, out_dim: 2 }],
        };
        let mut model = Model::new(spec, &mut stream(0, Purpose::Init, 0)).unwrap();
        let before: Vec<f32> = model
            .params()
            .iter()
            .flat_map(|(_, e)| e.weight.data().to_vec())
            .collect();
        let data = dataset_from(&[1.0, 2.0]);
        bn_recalibrate(&mut model, &data, 1.0, 2, &mut stream(0, Purpose::RecalPhase, 0)).unwrap();
        let after: Vec<f32> = model
            .params()
            .iter()
            .flat_map(|(_, e)| e.weight.data().to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn recalibrate_full_beta_matches_full_pass_oracle() {
        let mut g = stream(17, Purpose::Dataset, 0);
        let values: Vec<f32> = (0..64).map(|_| g.gen_range(-4.0f32..9.0)).collect();
        let data = dataset_from(&values);
        let mut model = bn_model();
        bn_recalibrate(&mut model, &data, 1.0, 7, &mut stream(1, Purpose::RecalPhase, 0)).unwrap();

        // Full-pass oracle straight off the raw data in f64.
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        let var = values
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / values.len() as f64;
        let got_mean = model.params().get("layer0.running_mean").unwrap().weight.data()[0] as f64;
        let got_var = model.params().get("layer0.running_var").unwrap().weight.data()[0] as f64;
        assert!((got_mean - mean).abs() < 1e-5, "{got_mean} vs {mean}");
        assert!((got_var - var).abs() < 1e-5, "{got_var} vs {var}");
    }

    #[test]
    fn recalibrate_trainable_weights_untouched() {
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 4 },
                LayerSpec::batchnorm(4),
            ],
        };
        let mut model = Model::new(spec, &mut stream(3, Purpose::Init, 0)).unwrap();
        let before: Vec<f32> = model
            .params()
            .trainable()
            .flat_map(|(_, e)| e.weight.data().to_vec())
            .collect();
        let data = Dataset {
            inputs: Tensor::from_vec(&[6, 2], (0..12).map(|i| i as f32).collect()).unwrap(),
            labels: vec![0; 6],
            class_count: 2,
        };
        bn_recalibrate(&mut model, &data, 0.5, 2, &mut stream(5, Purpose::RecalPhase, 0)).unwrap();
        let after: Vec<f32> = model
            .params()
            .trainable()
            .flat_map(|(_, e)| e.weight.data().to_vec())
            .collect();
        assert_eq!(before, after);
    }

    fn scalar_model(w: f32) -> Model {
        let spec = ModelSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::Dense { in_dim: 1, out_dim: 1 }],
        };
        let mut model = Model::new(spec, &mut stream(0, Purpose::Init, 0)).unwrap();
        model
            .params_mut()
            .get_mut("layer0.weight")
            .unwrap()
            .weight
            .data_mut()[0] = w;
        model
    }

    fn model_weight(model: &Model) -> f32 {
        model.params().get("layer0.weight").unwrap().weight.data()[0]
    }

    #[test]
    fn bachepoch_hook_weights_by_epoch_index() {
        let mut model = scalar_model(1.0);
        let data = dataset_from(&[0.0, 1.0]);
        let mut sampler = Sampler::new(
            SamplerConfig::new(Strategy::BachEpoch),
            model.params(),
        );
        let mut r = stream(0, Purpose::RecalPhase, 0);
        sampler.begin_epoch(2, &mut rng());
        sampler.end_epoch(&mut model, &data, 2, 0, &mut r).unwrap();
        assert_eq!(model_weight(&model), 1.0);
        // "train" to w2 = 4 and close epoch 2
        model.params_mut().get_mut("layer0.weight").unwrap().weight.data_mut()[0] = 4.0;
        sampler.begin_epoch(2, &mut rng());
        sampler.end_epoch(&mut model, &data, 2, 1, &mut r).unwrap();
        let expect = (1.0 * 1.0 + 2.0 * 4.0) / 3.0;
        assert!((model_weight(&model) - expect).abs() < 1e-6);
    }

    #[test]
    fn swa_c1_reassigns_mean_of_epoch_end_snapshots() {
        let mut model = scalar_model(2.0);
        let data = dataset_from(&[0.0, 1.0]);
        let mut sampler = Sampler::new(SamplerConfig::new(Strategy::Swa), model.params());
        let mut r = stream(0, Purpose::RecalPhase, 0);
        sampler.begin_epoch(2, &mut rng());
        let report = sampler.end_epoch(&mut model, &data, 2, 0, &mut r).unwrap();
        assert_eq!(
            report.actions,
            vec![
                HookAction::UpdateCrossEpochMean,
                HookAction::Reassign,
                HookAction::Recalibrate
            ]
        );
        assert_eq!(model_weight(&model), 2.0);
        model.params_mut().get_mut("layer0.weight").unwrap().weight.data_mut()[0] = 6.0;
        sampler.begin_epoch(2, &mut rng());
        sampler.end_epoch(&mut model, &data, 2, 1, &mut r).unwrap();
        assert!((model_weight(&model) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn swa_respects_cadence() {
        let mut model = scalar_model(2.0);
        let data = dataset_from(&[0.0, 1.0]);
        let cfg = SamplerConfig {
            c: 2,
            ..SamplerConfig::new(Strategy::Swa)
        };
        let mut sampler = Sampler::new(cfg, model.params());
        let mut r = stream(0, Purpose::RecalPhase, 0);
        sampler.begin_epoch(2, &mut rng());
        let report = sampler.end_epoch(&mut model, &data, 2, 0, &mut r).unwrap();
        assert_eq!(report.actions, vec![HookAction::UpdateCrossEpochMean]);
        assert_eq!(model_weight(&model), 2.0);
        sampler.begin_epoch(2, &mut rng());
        let report = sampler.end_epoch(&mut model, &data, 2, 1, &mut r).unwrap();
        assert!(report.actions.contains(&HookAction::Reassign));
    }

    #[test]
    fn pswa_hook_order_is_reassign_recalibrate_reset() {
        let mut model = scalar_model(1.5);
        let data = dataset_from(&[0.0, 1.0]);
        let mut sampler = Sampler::new(SamplerConfig::new(Strategy::Pswa), model.params());
        sampler.begin_epoch(2, &mut rng());
        sampler.on_batch_end(1, model.params()).unwrap();
        sampler.on_batch_end(2, model.params()).unwrap();
        let mut r = stream(0, Purpose::RecalPhase, 0);
        let report = sampler.end_epoch(&mut model, &data, 2, 0, &mut r).unwrap();
        assert_eq!(
            report.actions,
            vec![
                HookAction::Reassign,
                HookAction::Recalibrate,
                HookAction::ResetAccumulator
            ]
        );
        assert_eq!(sampler.accumulator().count(), 0);
    }

    #[test]
    fn none_strategy_hook_does_nothing() {
        let mut model = scalar_model(1.5);
        let data = dataset_from(&[0.0, 1.0]);
        let mut sampler = Sampler::new(SamplerConfig::new(Strategy::None), model.params());
        sampler.begin_epoch(2, &mut rng());
        assert!(!sampler.on_batch_end(1, model.params()).unwrap());
        let mut r = stream(0, Purpose::RecalPhase, 0);
        let report = sampler.end_epoch(&mut model, &data, 2, 0, &mut r).unwrap();
        assert!(report.actions.is_empty());
        assert_eq!(model_weight(&model), 1.5);
    }

    #[test]
    fn bachbatch_uses_cumulative_global_batch_weights() {
        let mut model = scalar_model(1.0);
        let data = dataset_from(&[0.0, 1.0]);
        let mut sampler = Sampler::new(SamplerConfig::new(Strategy::BachBatch), model.params());
        let mut r = stream(0, Purpose::RecalPhase, 0);
        // epoch 1: snapshots w=1 (batch 1), w=2 (batch 2)
        sampler.begin_epoch(2, &mut rng());
        sampler.on_batch_end(1, model.params()).unwrap();
        model.params_mut().get_mut("layer0.weight").unwrap().weight.data_mut()[0] = 2.0;
        sampler.on_batch_end(2, model.params()).unwrap();
        sampler.end_epoch(&mut model, &data, 2, 0, &mut r).unwrap();
        let expect1 = (1.0 * 1.0 + 2.0 * 2.0) / 3.0;
        assert!((model_weight(&model) - expect1 as f32).abs() < 1e-6);
        // epoch 2: one more snapshot w=5 with global weight 3
        model.params_mut().get_mut("layer0.weight").unwrap().weight.data_mut()[0] = 5.0;
        sampler.begin_epoch(1, &mut rng());
        sampler.on_batch_end(1, model.params()).unwrap();
        sampler.end_epoch(&mut model, &data, 2, 1, &mut r).unwrap();
        let expect2 = (1.0 + 4.0 + 15.0) / 6.0;
        assert!((model_weight(&model) - expect2 as f32).abs() < 1e-6);
    }

    #[test]
    fn config_validation_rejects_out_of_range() {
        let mut cfg = SamplerConfig::new(Strategy::Pswa);
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SamplerConfig::new(Strategy::Pwalks);
        cfg.k = 101.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SamplerConfig::new(Strategy::Pswm);
        cfg.m = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SamplerConfig::new(Strategy::Swa);
        cfg.c = 0;
        assert!(cfg.validate().is_err());
        assert!(SamplerConfig::new(Strategy::None).validate().is_ok());
    }
}
