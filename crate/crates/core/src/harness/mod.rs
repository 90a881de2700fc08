//! The training loop: shuffle, per-batch gradient steps, sampling-gated
//! accumulation, the end-of-epoch hook, metrics emission, and
//! checkpointing. A run is a pure function of (config, seed) apart from
//! the wall-clock timing columns.

mod checkpoint;
mod metrics;

pub use checkpoint::{
    apply_checkpoint, build_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter, METRICS_HEADER};

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfigFile;
use crate::data::{self, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{accuracy, cross_entropy, Model, ModelSpec};
use crate::optim::{lr_at, AdamState, LrSchedule, Optimizer, SgdState};
use crate::rng::{stream, Purpose};
use crate::wsample::{EpochHookReport, Sampler, SamplerConfig};

/// Fully validated and resolved run settings.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    /// Normalized config file (defaults filled); its canonical form is
    /// echoed into the run directory and hashed into checkpoints.
    pub file: RunConfigFile,
    pub model: ModelSpec,
    pub schedule: LrSchedule,
    pub sampler: SamplerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub drop_last: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub record_timing: bool,
}

impl TrainingConfig {
    /// Validates a parsed config file and resolves it into typed settings.
    pub fn resolve(mut file: RunConfigFile) -> Result<TrainingConfig> {
        let model = file.validate()?;
        let schedule = file.schedule()?;
        let sampler = file.sampler_config()?;
        Ok(TrainingConfig {
            model,
            schedule,
            sampler,
            epochs: file.run.epochs,
            batch_size: file.run.batch_size,
            drop_last: file.run.drop_last,
            seed: file.run.seed,
            output_dir: PathBuf::from(&file.run.output_dir),
            eval_every: file.run.eval_every,
            checkpoint_every: file.run.checkpoint_every,
            record_timing: file.run.record_timing,
            file,
        })
    }

    pub fn from_path(path: &Path) -> Result<TrainingConfig> {
        TrainingConfig::resolve(RunConfigFile::from_path(path)?)
    }

    pub fn config_hash(&self) -> Result<[u8; 32]> {
        self.file.hash()
    }

    /// Loads (train, test) datasets per the data section and applies any
    /// configured per-channel normalization.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.file.data;
        let (mut train, mut test) = match d.source.as_str() {
            "synthetic" => {
                let n_train = d.n_train.unwrap();
                let n_test = d.n_test.unwrap();
                let all = data::make_synthetic(
                    d.data_seed.unwrap(),
                    n_train + n_test,
                    d.dims.unwrap(),
                    d.classes.unwrap(),
                    d.separation.unwrap(),
                )?;
                all.split_front(n_train)?
            }
            "idx" => {
                let train = data::load_idx(
                    Path::new(d.train_images.as_ref().unwrap()),
                    Path::new(d.train_labels.as_ref().unwrap()),
                )?;
                let test = data::load_idx(
                    Path::new(d.test_images.as_ref().unwrap()),
                    Path::new(d.test_labels.as_ref().unwrap()),
                )?;
                (train, test)
            }
            "cifar10" => {
                let train = data::load_cifar10_bin(d.train_files.as_ref().unwrap())?;
                let test = data::load_cifar10_bin(d.test_files.as_ref().unwrap())?;
                (train, test)
            }
            other => return Err(Error::config(format!("unknown data source '{other}'"))),
        };
        if let (Some(mean), Some(std)) = (&d.normalize_mean, &d.normalize_std) {
            train.normalize(mean, std)?;
            test.normalize(mean, std)?;
        }
        for (name, ds) in [("train", &train), ("test", &test)] {
            if ds.sample_shape() != self.model.input_shape.as_slice() {
                return Err(Error::config(format!(
                    "{name} data sample shape {:?} does not match model input {:?}",
                    ds.sample_shape(),
                    self.model.input_shape
                )));
            }
        }
        if self.batch_size > train.len() {
            return Err(Error::config(format!(
                "batch size {} exceeds training set of {}",
                self.batch_size,
                train.len()
            )));
        }
        Ok((train, test))
    }

    pub fn build_optimizer(&self) -> Optimizer {
        let o = &self.file.optimizer;
        match o.kind.as_str() {
            "adam" => Optimizer::Adam(AdamState::new(
                o.beta1.unwrap(),
                o.beta2.unwrap(),
                o.eps.unwrap(),
            )),
            _ => Optimizer::Sgd(SgdState::new(o.momentum.unwrap(), o.weight_decay.unwrap())),
        }
    }
}

/// Instrumentation hooks; every callback defaults to a no-op.
pub trait TrainObserver {
    fn on_batch_end(&mut self, _epoch: usize, _batch: usize, _sampled: bool, _model: &Model) {}
    fn on_epoch_hook(&mut self, _epoch: usize, _report: &EpochHookReport, _model: &Model) {}
    fn on_epoch_end(&mut self, _epoch: usize, _record: &MetricsRecord, _model: &Model) {}
}

/// Observer that does nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Debug)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub final_model: Model,
}

/// Mean loss and accuracy over `dataset` in BN eval mode.
pub fn evaluate(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let n = dataset.len();
    let bs = batch_size.max(1).min(n);
    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(bs) {
        let (x, labels) = dataset.gather(chunk);
        let logits = model.forward_eval(&x)?;
        let (loss, _) = cross_entropy(&logits, &labels)?;
        let acc = accuracy(&logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        acc_sum += acc * chunk.len() as f64;
    }
    Ok((loss_sum / n as f64, acc_sum / n as f64))
}

/// Runs training end to end, writing `config.toml`, `metrics.csv`, and
/// checkpoints into the run directory. `resume` continues from a saved
/// checkpoint at its absolute epoch.
pub fn run_training(
    config: &TrainingConfig,
    resume: Option<&Checkpoint>,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutput> {
    let (train, test) = config.load_data()?;
    let hash = config.config_hash()?;

    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(
        config.output_dir.join("config.toml"),
        config.file.canonical_toml()?,
    )?;

    let mut model = Model::new(config.model.clone(), &mut stream(config.seed, Purpose::Init, 0))?;
    let mut optimizer = config.build_optimizer();
    let mut start_epoch = 0usize;
    if let Some(ckpt) = resume {
        start_epoch = apply_checkpoint(ckpt, &mut model, &mut optimizer)?;
        if ckpt.config_hash != hash {
            eprintln!("warning: resume checkpoint was written by a different config");
        }
        if start_epoch >= config.epochs {
            return Err(Error::usage(format!(
                "checkpoint already at epoch {start_epoch}, config trains {} epochs",
                config.epochs
            )));
        }
    }

    let mut sampler = Sampler::new(config.sampler, model.params());
    let plan = BatchPlan {
        batch_size: config.batch_size,
        seed: config.seed,
        drop_last: config.drop_last,
    };
    let mut writer = MetricsWriter::create(&config.output_dir.join("metrics.csv"))?;
    let mut records = Vec::new();

    for epoch in start_epoch..config.epochs {
        let epoch_timer = Instant::now();
        let mut t_backprop = 0.0f64;
        let mut t_sample = 0.0f64;

        let batches = data::batches(train.len(), &plan, epoch)?;
        let b = batches.len();
        sampler.begin_epoch(b, &mut stream(config.seed, Purpose::SamplePhase, epoch as u64));
        let lr = lr_at(&config.schedule, epoch);

        let mut seen = 0usize;
        let mut loss_sum = 0.0f64;
        let mut acc_sum = 0.0f64;
        for (idx, batch_indices) in batches.iter().enumerate() {
            let i = idx + 1;
            let (x, labels) = train.gather(batch_indices);

            let t0 = Instant::now();
            let (logits, cache) = model.forward_train(&x)?;
            let (loss, dlogits) = cross_entropy(&logits, &labels)?;
            model.backward(&cache, &dlogits)?;
            optimizer.step(model.params_mut(), lr)?;
            t_backprop += t0.elapsed().as_secs_f64();

            let batch_acc = accuracy(&logits, &labels)?;
            seen += labels.len();
            loss_sum += loss * labels.len() as f64;
            acc_sum += batch_acc * labels.len() as f64;

            let t0 = Instant::now();
            let sampled = sampler.on_batch_end(i, model.params())?;
            t_sample += t0.elapsed().as_secs_f64();
            observer.on_batch_end(epoch, i, sampled, &model);
        }

        let hook = sampler.end_epoch(
            &mut model,
            &train,
            config.batch_size,
            epoch,
            &mut stream(config.seed, Purpose::RecalPhase, epoch as u64),
        )?;
        t_sample += hook.sample_seconds;
        let t_recal = hook.recal_seconds;
        observer.on_epoch_hook(epoch, &hook, &model);

        let eval_due = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
        let (test_loss, test_acc) = if eval_due {
            evaluate(&model, &test, config.batch_size)?
        } else {
            (f64::NAN, f64::NAN)
        };

        let t_total = epoch_timer.elapsed().as_secs_f64();
        let mut record = MetricsRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: acc_sum / seen as f64,
            test_loss,
            test_acc,
            lr,
            t_backprop_s: t_backprop,
            t_sample_s: t_sample,
            t_recal_s: t_recal,
            t_total_s: t_total,
        };
        if !config.record_timing {
            record.t_backprop_s = 0.0;
            record.t_sample_s = 0.0;
            record.t_recal_s = 0.0;
            record.t_total_s = 0.0;
        }
        writer.append(&record)?;
        observer.on_epoch_end(epoch, &record, &model);
        records.push(record);

        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            let ckpt = build_checkpoint(&model, &optimizer, epoch + 1, hash);
            ckpt.write_to(&config.output_dir.join(format!("checkpoint_epoch_{}.bin", epoch + 1)))?;
        }
    }

    let ckpt = build_checkpoint(&model, &optimizer, config.epochs, hash);
    ckpt.write_to(&config.output_dir.join("checkpoint_final.bin"))?;

    Ok(RunOutput {
        run_dir: config.output_dir.clone(),
        records,
        final_model: model,
    })
}

/// Mean epoch wall-time per repeat for one sampler configuration.
#[derive(Debug, Clone)]
pub struct OverheadEntry {
    pub label: String,
    /// Mean epoch time of each timed repeat, seconds.
    pub repeat_means: Vec<f64>,
    pub mean_s: f64,
    pub sd_s: f64,
    pub median_s: f64,
    /// median_s / baseline median_s; 1.0 for the baseline itself.
    pub overhead_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct OverheadReport {
    pub repeats: usize,
    pub entries: Vec<OverheadEntry>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Times `repeats` full runs of each config (plus one untimed warm-up)
/// and reports epoch-time statistics and overhead ratios against the
/// strategy-none baseline. Configs must differ only in their sampler
/// section; the first `none` entry is the baseline.
pub fn measure_overhead(
    configs: &[TrainingConfig],
    repeats: usize,
    work_dir: &Path,
) -> Result<OverheadReport> {
    if configs.len() < 2 {
        return Err(Error::usage("overhead comparison needs at least 2 configs"));
    }
    if repeats == 0 {
        return Err(Error::usage("overhead comparison needs repeats >= 1"));
    }
    let mut stripped: Vec<RunConfigFile> = configs.iter().map(|c| c.file.clone()).collect();
    for f in &mut stripped {
        f.sampler = Default::default();
        f.run.output_dir = String::new();
    }
    let reference = stripped[0].canonical_toml()?;
    for f in &stripped[1..] {
        if f.canonical_toml()? != reference {
            return Err(Error::usage(
                "overhead configs must differ only in their sampler section",
            ));
        }
    }
    let baseline_idx = configs
        .iter()
        .position(|c| c.sampler.strategy == crate::wsample::Strategy::None)
        .ok_or_else(|| Error::usage("overhead comparison needs a strategy-none baseline"))?;

    let mut entries = Vec::with_capacity(configs.len());
    for (ci, config) in configs.iter().enumerate() {
        let mut repeat_means = Vec::with_capacity(repeats);
        for rep in 0..=repeats {
            let mut cfg = config.clone();
            cfg.record_timing = true;
            cfg.file.run.record_timing = true;
            cfg.output_dir = work_dir.join(format!("bench_{ci}_{rep}"));
            cfg.file.run.output_dir = cfg.output_dir.display().to_string();
            let out = run_training(&cfg, None, &mut NoopObserver)?;
            if rep == 0 {
                continue; // warm-up
            }
            let total: f64 = out.records.iter().map(|r| r.t_total_s).sum();
            repeat_means.push(total / out.records.len() as f64);
        }
        let mean = repeat_means.iter().sum::<f64>() / repeat_means.len() as f64;
        let var = repeat_means
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / repeat_means.len() as f64;
        let mut sorted = repeat_means.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        entries.push(OverheadEntry {
            label: config.sampler.strategy.name().to_string(),
            repeat_means,
            mean_s: mean,
            sd_s: var.sqrt(),
            median_s: median(&sorted),
            overhead_ratio: 0.0,
        });
    }
    let base = entries[baseline_idx].median_s;
    for e in &mut entries {
        e.overhead_ratio = e.median_s / base;
    }
    Ok(OverheadReport { repeats, entries })
}
