//! The TOML run-configuration schema: parsing, strict validation,
//! default filling, and the canonical serialized form whose SHA-256 is
//! embedded in checkpoints.
//!
//! Unknown keys anywhere in the file are rejected, and keys that do not
//! apply to the selected `type` of a section are rejected too, so a typo
//! can never silently fall back to a default.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelSpec, BN_DEFAULT_EPS, BN_DEFAULT_MOMENTUM};
use crate::optim::LrSchedule;
use crate::wsample::{PswmVariant, SamplerConfig, Strategy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub model: ModelSection,
    pub data: DataSection,
    pub optimizer: OptimizerSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerEntry>,
}

/// One layer row; which keys are required depends on `type`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "in", default, skip_serializing_if = "Option::is_none")]
    pub in_dim: Option<usize>,
    #[serde(rename = "out", default, skip_serializing_if = "Option::is_none")]
    pub out_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_ch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_ch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f32>,
}

impl LayerEntry {
    fn reject_extras(&self, kind: &str, allowed: &[&str]) -> Result<()> {
        let fields: [(&str, bool); 10] = [
            ("in", self.in_dim.is_some()),
            ("out", self.out_dim.is_some()),
            ("in_ch", self.in_ch.is_some()),
            ("out_ch", self.out_ch.is_some()),
            ("kernel", self.kernel.is_some()),
            ("stride", self.stride.is_some()),
            ("pad", self.pad.is_some()),
            ("features", self.features.is_some()),
            ("eps", self.eps.is_some()),
            ("momentum", self.momentum.is_some()),
        ];
        for (name, set) in fields {
            if set && !allowed.contains(&name) {
                return Err(Error::config(format!(
                    "layer type '{kind}' does not take key '{name}'"
                )));
            }
        }
        Ok(())
    }

    fn require(v: Option<usize>, kind: &str, key: &str) -> Result<usize> {
        v.ok_or_else(|| Error::config(format!("layer type '{kind}' requires key '{key}'")))
    }

    /// Validates keys against the layer kind, fills defaults in place, and
    /// returns the typed spec.
    fn resolve(&mut self) -> Result<LayerSpec> {
        match self.kind.as_str() {
            "dense" => {
                self.reject_extras("dense", &["in", "out"])?;
                Ok(LayerSpec::Dense {
                    in_dim: Self::require(self.in_dim, "dense", "in")?,
                    out_dim: Self::require(self.out_dim, "dense", "out")?,
                })
            }
            "relu" => {
                self.reject_extras("relu", &[])?;
                Ok(LayerSpec::Relu)
            }
            "flatten" => {
                self.reject_extras("flatten", &[])?;
                Ok(LayerSpec::Flatten)
            }
            "conv2d" => {
                self.reject_extras("conv2d", &["in_ch", "out_ch", "kernel", "stride", "pad"])?;
                let stride = *self.stride.get_or_insert(1);
                let pad = *self.pad.get_or_insert(0);
                Ok(LayerSpec::Conv2d {
                    in_ch: Self::require(self.in_ch, "conv2d", "in_ch")?,
                    out_ch: Self::require(self.out_ch, "conv2d", "out_ch")?,
                    kernel: Self::require(self.kernel, "conv2d", "kernel")?,
                    stride,
                    pad,
                })
            }
            "batchnorm" => {
                self.reject_extras("batchnorm", &["features", "eps", "momentum"])?;
                let eps = *self.eps.get_or_insert(BN_DEFAULT_EPS);
                let momentum = *self.momentum.get_or_insert(BN_DEFAULT_MOMENTUM);
                if !(0.0..=1.0).contains(&momentum) {
                    return Err(Error::config("batchnorm momentum must be in [0,1]"));
                }
                Ok(LayerSpec::BatchNorm {
                    features: Self::require(self.features, "batchnorm", "features")?,
                    eps,
                    momentum,
                })
            }
            other => Err(Error::config(format!("unknown layer type '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: String,
    // synthetic
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Dataset generator seed; defaults to run.seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    // idx
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<String>,
    // cifar10
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_files: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_files: Option<Vec<String>>,
    // per-channel standardization, applied after loading
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize_mean: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize_std: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(rename = "type")]
    pub kind: String,
    pub base_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_epochs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(rename = "type", default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_c")]
    pub c: usize,
    #[serde(default = "default_variant")]
    pub pswm_variant: String,
}

fn default_strategy() -> String {
    "none".to_string()
}
fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    0.1
}
fn default_k() -> f64 {
    2.0
}
fn default_m() -> f64 {
    0.5
}
fn default_c() -> usize {
    1
}
fn default_variant() -> String {
    "ema".to_string()
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            strategy: default_strategy(),
            alpha: default_alpha(),
            beta: default_beta(),
            k: default_k(),
            m: default_m(),
            c: default_c(),
            pswm_variant: default_variant(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub drop_last: bool,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: String,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// 0 = final checkpoint only.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// When false the timing columns of metrics.csv are written as 0,
    /// making the file a pure function of (config, seed).
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_eval_every() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl RunConfigFile {
    pub fn from_toml(text: &str) -> Result<RunConfigFile> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))
    }

    pub fn from_path(path: &std::path::Path) -> Result<RunConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        RunConfigFile::from_toml(&text)
    }

    /// Validates every section, filling defaults in place so that the
    /// serialized form echoes the exact values a run will use.
    pub fn validate(&mut self) -> Result<ModelSpec> {
        let mut layers = Vec::with_capacity(self.model.layers.len());
        for entry in &mut self.model.layers {
            layers.push(entry.resolve()?);
        }
        let spec = ModelSpec {
            input_shape: self.model.input_shape.clone(),
            layers,
        };
        spec.validate()?;

        self.validate_data()?;
        self.validate_optimizer()?;
        self.schedule()?.validate()?;
        self.sampler_config()?.validate()?;

        if self.run.epochs == 0 {
            return Err(Error::config("run.epochs must be >= 1"));
        }
        if self.run.batch_size == 0 {
            return Err(Error::config("run.batch_size must be >= 1"));
        }
        if self.run.eval_every == 0 {
            return Err(Error::config("run.eval_every must be >= 1"));
        }
        if self.run.output_dir.is_empty() {
            return Err(Error::config("run.output_dir must not be empty"));
        }
        Ok(spec)
    }

    fn validate_data(&mut self) -> Result<()> {
        let d = &mut self.data;
        fn set(name: &'static str, on: bool) -> Option<&'static str> {
            if on {
                Some(name)
            } else {
                None
            }
        }
        let synthetic_keys: Vec<&str> = [
            set("n_train", d.n_train.is_some()),
            set("n_test", d.n_test.is_some()),
            set("dims", d.dims.is_some()),
            set("classes", d.classes.is_some()),
            set("separation", d.separation.is_some()),
            set("data_seed", d.data_seed.is_some()),
        ]
        .into_iter()
        .flatten()
        .collect();
        let idx_keys: Vec<&str> = [
            set("train_images", d.train_images.is_some()),
            set("train_labels", d.train_labels.is_some()),
            set("test_images", d.test_images.is_some()),
            set("test_labels", d.test_labels.is_some()),
        ]
        .into_iter()
        .flatten()
        .collect();
        let cifar_keys: Vec<&str> = [
            set("train_files", d.train_files.is_some()),
            set("test_files", d.test_files.is_some()),
        ]
        .into_iter()
        .flatten()
        .collect();

        match d.source.as_str() {
            "synthetic" => {
                if let Some(k) = idx_keys.first().or(cifar_keys.first()) {
                    return Err(Error::config(format!(
                        "data source 'synthetic' does not take key '{k}'"
                    )));
                }
                d.n_train.get_or_insert(1000);
                d.n_test.get_or_insert(200);
                d.dims.get_or_insert(10);
                d.classes.get_or_insert(3);
                d.separation.get_or_insert(6.0);
                d.data_seed.get_or_insert(self.run.seed);
                let classes = d.classes.unwrap();
                if classes < 2 {
                    return Err(Error::config("synthetic data needs classes >= 2"));
                }
                if d.n_train.unwrap() < classes || d.n_test.unwrap() < classes {
                    return Err(Error::config("synthetic data needs n >= classes"));
                }
            }
            "idx" => {
                if let Some(k) = synthetic_keys.first().or(cifar_keys.first()) {
                    return Err(Error::config(format!(
                        "data source 'idx' does not take key '{k}'"
                    )));
                }
                for (key, val) in [
                    ("train_images", &d.train_images),
                    ("train_labels", &d.train_labels),
                    ("test_images", &d.test_images),
                    ("test_labels", &d.test_labels),
                ] {
                    if val.is_none() {
                        return Err(Error::config(format!("data source 'idx' requires '{key}'")));
                    }
                }
            }
            "cifar10" => {
                if let Some(k) = synthetic_keys.first().or(idx_keys.first()) {
                    return Err(Error::config(format!(
                        "data source 'cifar10' does not take key '{k}'"
                    )));
                }
                if d.train_files.as_ref().map_or(true, |v| v.is_empty())
                    || d.test_files.as_ref().map_or(true, |v| v.is_empty())
                {
                    return Err(Error::config(
                        "data source 'cifar10' requires non-empty 'train_files' and 'test_files'",
                    ));
                }
            }
            other => {
                return Err(Error::config(format!("unknown data source '{other}'")));
            }
        }
        match (&d.normalize_mean, &d.normalize_std) {
            (None, None) => {}
            (Some(m), Some(s)) if m.len() == s.len() && !m.is_empty() => {}
            _ => {
                return Err(Error::config(
                    "normalize_mean and normalize_std must both be given with equal lengths",
                ))
            }
        }
        Ok(())
    }

    fn validate_optimizer(&mut self) -> Result<()> {
        let o = &mut self.optimizer;
        match o.kind.as_str() {
            "sgd" => {
                if o.beta1.is_some() || o.beta2.is_some() || o.eps.is_some() {
                    return Err(Error::config("optimizer 'sgd' does not take beta1/beta2/eps"));
                }
                let mu = *o.momentum.get_or_insert(0.9);
                let wd = *o.weight_decay.get_or_insert(5e-4);
                if !(0.0..1.0).contains(&mu) {
                    return Err(Error::config("sgd momentum must be in [0,1)"));
                }
                if wd < 0.0 {
                    return Err(Error::config("weight_decay must be >= 0"));
                }
            }
            "adam" => {
                if o.momentum.is_some() || o.weight_decay.is_some() {
                    return Err(Error::config(
                        "optimizer 'adam' does not take momentum/weight_decay",
                    ));
                }
                let b1 = *o.beta1.get_or_insert(0.9);
                let b2 = *o.beta2.get_or_insert(0.999);
                let eps = *o.eps.get_or_insert(1e-8);
                if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
                    return Err(Error::config("adam betas must be in [0,1)"));
                }
                if eps <= 0.0 {
                    return Err(Error::config("adam eps must be > 0"));
                }
            }
            other => return Err(Error::config(format!("unknown optimizer '{other}'"))),
        }
        Ok(())
    }

    /// Typed learning-rate schedule (after validation).
    pub fn schedule(&self) -> Result<LrSchedule> {
        let s = &self.schedule;
        match s.kind.as_str() {
            "constant" => {
                if s.milestones.is_some() || s.gamma.is_some() || s.power.is_some() || s.total_epochs.is_some() {
                    return Err(Error::config(
                        "schedule 'constant' takes only base_lr",
                    ));
                }
                Ok(LrSchedule::Constant { base_lr: s.base_lr })
            }
            "step" => {
                if s.power.is_some() || s.total_epochs.is_some() {
                    return Err(Error::config("schedule 'step' does not take power/total_epochs"));
                }
                Ok(LrSchedule::Step {
                    base_lr: s.base_lr,
                    milestones: s
                        .milestones
                        .clone()
                        .ok_or_else(|| Error::config("schedule 'step' requires milestones"))?,
                    gamma: s
                        .gamma
                        .ok_or_else(|| Error::config("schedule 'step' requires gamma"))?,
                })
            }
            "poly" => {
                if s.milestones.is_some() || s.gamma.is_some() {
                    return Err(Error::config("schedule 'poly' does not take milestones/gamma"));
                }
                Ok(LrSchedule::Poly {
                    base_lr: s.base_lr,
                    power: s
                        .power
                        .ok_or_else(|| Error::config("schedule 'poly' requires power"))?,
                    total_epochs: s
                        .total_epochs
                        .ok_or_else(|| Error::config("schedule 'poly' requires total_epochs"))?,
                })
            }
            other => Err(Error::config(format!("unknown schedule '{other}'"))),
        }
    }

    /// Typed sampler configuration (after validation).
    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let strategy = match s.strategy.as_str() {
            "none" => Strategy::None,
            "pswa" => Strategy::Pswa,
            "pwalks" => Strategy::Pwalks,
            "pswm" => Strategy::Pswm,
            "swa" => Strategy::Swa,
            "bachepoch" => Strategy::BachEpoch,
            "bachbatch" => Strategy::BachBatch,
            other => return Err(Error::config(format!("unknown sampler type '{other}'"))),
        };
        let pswm_variant = match s.pswm_variant.as_str() {
            "ema" => PswmVariant::Ema,
            "literal" => PswmVariant::Literal,
            other => return Err(Error::config(format!("unknown pswm_variant '{other}'"))),
        };
        Ok(SamplerConfig {
            strategy,
            alpha: s.alpha,
            beta: s.beta,
            k: s.k,
            m: s.m,
            c: s.c,
            pswm_variant,
        })
    }

    /// Canonical serialized form: section and key order are fixed by the
    /// struct definitions, so identical configs produce identical bytes.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config serialize: {e}")))
    }

    /// SHA-256 of the canonical form.
    pub fn hash(&self) -> Result<[u8; 32]> {
        let text = self.canonical_toml()?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        Ok(h.finalize().into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
[model]
input_shape = [4]

[[model.layers]]
type = "dense"
in = 4
out = 3

[data]
source = "synthetic"
n_train = 40
n_test = 20
dims = 4
classes = 3
separation = 8.0

[optimizer]
type = "sgd"

[schedule]
type = "constant"
base_lr = 0.1

[run]
epochs = 2
batch_size = 10
output_dir = "run"
"#;

    #[test]
    fn minimal_config_parses_and_fills_defaults() {
        let mut cfg = RunConfigFile::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sampler.strategy, "none");
        assert_eq!(cfg.sampler.alpha, 1.0);
        assert_eq!(cfg.sampler.beta, 0.1);
        assert_eq!(cfg.sampler.k, 2.0);
        assert_eq!(cfg.optimizer.momentum, Some(0.9));
        assert_eq!(cfg.optimizer.weight_decay, Some(5e-4));
        assert!(cfg.run.record_timing);
        // defaults echoed in the canonical form
        let echo = cfg.canonical_toml().unwrap();
        assert!(echo.contains("alpha = 1.0"), "{echo}");
        assert!(echo.contains("beta = 0.1"), "{echo}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[run]", "[run]\nbogus_key = 1");
        assert!(RunConfigFile::from_toml(&text).is_err());
    }

    #[test]
    fn wrong_kind_keys_are_rejected() {
        let text = MINIMAL.replace("type = \"sgd\"", "type = \"sgd\"\nbeta1 = 0.9");
        let mut cfg = RunConfigFile::from_toml(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pswa_alpha_zero_is_rejected() {
        let text = MINIMAL.replace(
            "[run]",
            "[sampler]\ntype = \"pswa\"\nalpha = 0.0\n\n[run]",
        );
        let mut cfg = RunConfigFile::from_toml(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pswm_in_recommended_band_is_accepted() {
        let text = MINIMAL.replace(
            "[run]",
            "[sampler]\ntype = \"pswm\"\nm = 0.7\n\n[run]",
        );
        let mut cfg = RunConfigFile::from_toml(&text).unwrap();
        cfg.validate().unwrap();
        let sc = cfg.sampler_config().unwrap();
        assert_eq!(sc.strategy, Strategy::Pswm);
        assert_eq!(sc.m, 0.7);
    }

    #[test]
    fn hash_is_stable_and_key_order_independent() {
        let mut a = RunConfigFile::from_toml(MINIMAL).unwrap();
        a.validate().unwrap();
        // same content, different key order inside [run]
        let reordered = MINIMAL.replace(
            "epochs = 2\nbatch_size = 10\noutput_dir = \"run\"",
            "output_dir = \"run\"\nepochs = 2\nbatch_size = 10",
        );
        let mut b = RunConfigFile::from_toml(&reordered).unwrap();
        b.validate().unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn layer_entry_rejects_cross_kind_keys() {
        let text = MINIMAL.replace("in = 4\nout = 3", "in = 4\nout = 3\nkernel = 3");
        let mut cfg = RunConfigFile::from_toml(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule_variants_resolve() {
        let step = MINIMAL.replace(
            "type = \"constant\"\nbase_lr = 0.1",
            "type = \"step\"\nbase_lr = 0.1\nmilestones = [80, 120]\ngamma = 0.1",
        );
        let mut cfg = RunConfigFile::from_toml(&step).unwrap();
        cfg.validate().unwrap();
        assert!(matches!(cfg.schedule().unwrap(), LrSchedule::Step { .. }));

        let poly = MINIMAL.replace(
            "type = \"constant\"\nbase_lr = 0.1",
            "type = \"poly\"\nbase_lr = 0.1\npower = 1.0\ntotal_epochs = 100",
        );
        let mut cfg = RunConfigFile::from_toml(&poly).unwrap();
        cfg.validate().unwrap();
        assert!(matches!(cfg.schedule().unwrap(), LrSchedule::Poly { .. }));
    }
}
