//! Minimal neural-network kernel: model specs, named parameters, and
//! explicit forward/backward passes.
//!
//! Gradients follow the batch-mean convention: the loss supplies
//! `dlogits` already scaled by 1/B, and `backward` is a plain
//! vector-Jacobian product, so parameter gradients come out as means over
//! the batch and learning rates stay batch-size-invariant.

mod layers;
mod loss;

pub use loss::{accuracy, cross_entropy};

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_DEFAULT_EPS: f32 = 1e-5;
pub const BN_DEFAULT_MOMENTUM: f32 = 0.1;

/// One layer of a model. Shapes are per-sample (no batch dimension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        features: usize,
        eps: f32,
        momentum: f32,
    },
    Flatten,
}

impl LayerSpec {
    pub fn batchnorm(features: usize) -> LayerSpec {
        LayerSpec::BatchNorm {
            features,
            eps: BN_DEFAULT_EPS,
            momentum: BN_DEFAULT_MOMENTUM,
        }
    }

    fn is_trainable(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::BatchNorm { .. }
        )
    }
}

/// Ordered layer list plus the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Walks the layer list checking adjacent shape compatibility.
    /// Returns the per-sample output shape.
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        if !self.layers.iter().any(|l| l.is_trainable()) {
            return Err(Error::config("model has no trainable layer"));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    if shape != vec![*in_dim] {
                        return Err(Error::config(format!(
                            "layer {i}: dense expects input [{in_dim}], got {shape:?}"
                        )));
                    }
                    if *in_dim == 0 || *out_dim == 0 {
                        return Err(Error::config(format!("layer {i}: zero-sized dense layer")));
                    }
                    vec![*out_dim]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                } => {
                    if shape.len() != 3 || shape[0] != *in_ch {
                        return Err(Error::config(format!(
                            "layer {i}: conv2d expects input [{in_ch},H,W], got {shape:?}"
                        )));
                    }
                    if *kernel == 0 || *stride == 0 || *out_ch == 0 {
                        return Err(Error::config(format!("layer {i}: invalid conv2d geometry")));
                    }
                    let out = |len: usize| -> Result<usize> {
                        let padded = len + 2 * pad;
                        if padded < *kernel {
                            return Err(Error::config(format!(
                                "layer {i}: kernel {kernel} exceeds padded extent {padded}"
                            )));
                        }
                        Ok((padded - kernel) / stride + 1)
                    };
                    vec![*out_ch, out(shape[1])?, out(shape[2])?]
                }
                LayerSpec::BatchNorm { features, eps, .. } => {
                    if shape.is_empty() || shape[0] != *features {
                        return Err(Error::config(format!(
                            "layer {i}: batchnorm({features}) cannot follow shape {shape:?}"
                        )));
                    }
                    if *eps <= 0.0 {
                        return Err(Error::config(format!("layer {i}: batchnorm eps must be > 0")));
                    }
                    shape
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
            };
        }
        Ok(shape)
    }
}

/// Whether a parameter receives gradient updates or is a BN running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Trainable,
    BnRunningStat,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub weight: Tensor,
    pub gradient: Tensor,
    pub kind: ParamKind,
}

/// Named, ordered parameter map. Iteration order is insertion order, which
/// is fixed by the model spec, so every walk over the set is deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    entries: IndexMap<String, ParamEntry>,
}

impl ParameterSet {
    pub fn insert(&mut self, name: impl Into<String>, weight: Tensor, kind: ParamKind) {
        let gradient = Tensor::zeros(weight.shape());
        let prev = self.entries.insert(
            name.into(),
            ParamEntry {
                weight,
                gradient,
                kind,
            },
        );
        debug_assert!(prev.is_none(), "duplicate parameter name");
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.iter().filter(|(_, e)| e.kind == ParamKind::Trainable)
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.iter_mut().filter(|(_, e)| e.kind == ParamKind::Trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalar coordinates.
    pub fn trainable_len(&self) -> usize {
        self.trainable().map(|(_, e)| e.weight.len()).sum()
    }

    pub fn zero_gradients(&mut self) {
        for (_, e) in self.iter_mut() {
            e.gradient.fill(0.0);
        }
    }
}

/// Opaque per-layer activations kept between forward and backward.
#[derive(Debug)]
pub struct ForwardCache {
    items: Vec<LayerCache>,
    batch: usize,
}

#[derive(Debug)]
enum LayerCache {
    Dense {
        input: Tensor,
    },
    Relu {
        input: Tensor,
    },
    Conv2d {
        input: Tensor,
    },
    BatchNorm {
        xhat: Tensor,
        inv_std: Vec<f32>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
}

/// Exact per-feature activation sums collected across `forward_collect`
/// calls, keyed by batch-norm layer index.
#[derive(Debug, Clone, Default)]
pub struct StatsCollector {
    per_layer: BTreeMap<usize, FeatureStats>,
}

#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
    pub count: u64,
}

impl StatsCollector {
    pub fn new() -> StatsCollector {
        StatsCollector::default()
    }

    fn add(&mut self, layer: usize, sums: (Vec<f64>, Vec<f64>), reduced: u64) {
        let entry = self.per_layer.entry(layer).or_insert_with(|| FeatureStats {
            sum: vec![0.0; sums.0.len()],
            sumsq: vec![0.0; sums.0.len()],
            count: 0,
        });
        for (a, b) in entry.sum.iter_mut().zip(sums.0) {
            *a += b;
        }
        for (a, b) in entry.sumsq.iter_mut().zip(sums.1) {
            *a += b;
        }
        entry.count += reduced;
    }

    pub fn layers(&self) -> impl Iterator<Item = (usize, &FeatureStats)> {
        self.per_layer.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }
}

enum BnPass<'a> {
    Eval,
    Collect(&'a mut StatsCollector),
}

/// A model spec bound to its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: ParameterSet,
}

impl Model {
    /// Validates the spec and initializes parameters: dense/conv weights
    /// uniform(-s, s) with s = sqrt(6/(fan_in+fan_out)), biases zero,
    /// BN gamma=1 beta=0, running mean 0 / var 1.
    pub fn new(spec: ModelSpec, rng: &mut ChaCha8Rng) -> Result<Model> {
        spec.validate()?;
        let mut params = ParameterSet::default();
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let s = (6.0 / (*in_dim + *out_dim) as f32).sqrt();
                    let mut w = Tensor::zeros(&[*out_dim, *in_dim]);
                    w.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
                    params.insert(format!("layer{i}.weight"), w, ParamKind::Trainable);
                    params.insert(
                        format!("layer{i}.bias"),
                        Tensor::zeros(&[*out_dim]),
                        ParamKind::Trainable,
                    );
                }
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    let fan_out = out_ch * kernel * kernel;
                    let s = (6.0 / (fan_in + fan_out) as f32).sqrt();
                    let mut w = Tensor::zeros(&[*out_ch, *in_ch, *kernel, *kernel]);
                    w.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
                    params.insert(format!("layer{i}.weight"), w, ParamKind::Trainable);
                    params.insert(
                        format!("layer{i}.bias"),
                        Tensor::zeros(&[*out_ch]),
                        ParamKind::Trainable,
                    );
                }
                LayerSpec::BatchNorm { features, .. } => {
                    params.insert(
                        format!("layer{i}.gamma"),
                        Tensor::filled(&[*features], 1.0),
                        ParamKind::Trainable,
                    );
                    params.insert(
                        format!("layer{i}.beta"),
                        Tensor::zeros(&[*features]),
                        ParamKind::Trainable,
                    );
                    params.insert(
                        format!("layer{i}.running_mean"),
                        Tensor::zeros(&[*features]),
                        ParamKind::BnRunningStat,
                    );
                    params.insert(
                        format!("layer{i}.running_var"),
                        Tensor::filled(&[*features], 1.0),
                        ParamKind::BnRunningStat,
                    );
                }
                LayerSpec::Relu | LayerSpec::Flatten => {}
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn has_batchnorm(&self) -> bool {
        self.spec
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BatchNorm { .. }))
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let shape = batch.shape();
        if shape.is_empty() || shape[0] == 0 {
            return Err(Error::config("batch must contain at least one sample"));
        }
        if shape[1..] != self.spec.input_shape[..] {
            return Err(Error::config(format!(
                "batch sample shape {:?} does not match model input {:?}",
                &shape[1..],
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Training-mode forward: batch-stats normalization, running-stat EMA
    /// update, and a cache for `backward`.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_batch(batch)?;
        let mut cache = Vec::with_capacity(self.spec.layers.len());
        let mut x = batch.clone();
        let layer_specs = self.spec.layers.clone();
        for (i, layer) in layer_specs.iter().enumerate() {
            x = self.layer_forward_train(i, layer, x, &mut cache)?;
            x.check_finite(&format!("layer{i} output"))?;
        }
        Ok((
            x,
            ForwardCache {
                items: cache,
                batch: batch.shape()[0],
            },
        ))
    }

    /// Eval-mode forward: running statistics only, no side effects.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            x = self.layer_forward_pure(i, layer, x, BnPass::Eval)?;
            x.check_finite(&format!("layer{i} output"))?;
        }
        Ok(x)
    }

    /// Collect-stats forward: batch-stats normalization plus exact
    /// per-feature sum / sum-of-squares accumulation into `collector`.
    pub fn forward_collect(&self, batch: &Tensor, collector: &mut StatsCollector) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            x = self.layer_forward_pure(i, layer, x, BnPass::Collect(collector))?;
            x.check_finite(&format!("layer{i} output"))?;
        }
        Ok(x)
    }

    fn weight(&self, name: &str) -> &Tensor {
        &self.params.get(name).expect("parameter exists").weight
    }

    /// Forward through one layer without mutating the model.
    fn layer_forward_pure(
        &self,
        i: usize,
        layer: &LayerSpec,
        x: Tensor,
        mut bn: BnPass<'_>,
    ) -> Result<Tensor> {
        Ok(match layer {
            LayerSpec::Dense { .. } => layers::dense_forward(
                &x,
                self.weight(&format!("layer{i}.weight")),
                self.weight(&format!("layer{i}.bias")),
            ),
            LayerSpec::Relu => layers::relu_forward(&x),
            LayerSpec::Conv2d { stride, pad, .. } => layers::conv2d_forward(
                &x,
                self.weight(&format!("layer{i}.weight")),
                self.weight(&format!("layer{i}.bias")),
                *stride,
                *pad,
            )?,
            LayerSpec::Flatten => layers::flatten_forward(&x),
            LayerSpec::BatchNorm { features, eps, .. } => {
                let layout = layers::bn_layout(&x, *features)?;
                let gamma = self.weight(&format!("layer{i}.gamma"));
                let beta = self.weight(&format!("layer{i}.beta"));
                match &mut bn {
                    BnPass::Eval => layers::bn_eval_forward(
                        &x,
                        &layout,
                        self.weight(&format!("layer{i}.running_mean")),
                        self.weight(&format!("layer{i}.running_var")),
                        gamma,
                        beta,
                        *eps,
                    ),
                    BnPass::Collect(collector) => {
                        let sums = layers::bn_feature_sums(&x, &layout);
                        collector.add(i, sums, layout.group as u64);
                        let (mean, var) = layers::bn_batch_moments(&x, &layout);
                        let (y, _, _) = layers::bn_apply(&x, &layout, &mean, &var, gamma, beta, *eps);
                        y
                    }
                }
            }
        })
    }

    /// Train-mode layer forward: updates BN running stats and fills the cache.
    fn layer_forward_train(
        &mut self,
        i: usize,
        layer: &LayerSpec,
        x: Tensor,
        cache: &mut Vec<LayerCache>,
    ) -> Result<Tensor> {
        Ok(match layer {
            LayerSpec::Dense { .. } => {
                let y = layers::dense_forward(
                    &x,
                    self.weight(&format!("layer{i}.weight")),
                    self.weight(&format!("layer{i}.bias")),
                );
                cache.push(LayerCache::Dense { input: x });
                y
            }
            LayerSpec::Relu => {
                let y = layers::relu_forward(&x);
                cache.push(LayerCache::Relu { input: x });
                y
            }
            LayerSpec::Conv2d { stride, pad, .. } => {
                let y = layers::conv2d_forward(
                    &x,
                    self.weight(&format!("layer{i}.weight")),
                    self.weight(&format!("layer{i}.bias")),
                    *stride,
                    *pad,
                )?;
                cache.push(LayerCache::Conv2d { input: x });
                y
            }
            LayerSpec::Flatten => {
                let y = layers::flatten_forward(&x);
                cache.push(LayerCache::Flatten {
                    input_shape: x.shape().to_vec(),
                });
                y
            }
            LayerSpec::BatchNorm {
                features,
                eps,
                momentum,
            } => {
                let layout = layers::bn_layout(&x, *features)?;
                let (mean, var) = layers::bn_batch_moments(&x, &layout);
                let (y, xhat, inv_std) = {
                    let gamma = self.weight(&format!("layer{i}.gamma"));
                    let beta = self.weight(&format!("layer{i}.beta"));
                    layers::bn_apply(&x, &layout, &mean, &var, gamma, beta, *eps)
                };
                // running <- (1-momentum)*running + momentum*batch; variance
                // stored with the unbiased estimator.
                let m = layout.group as f64;
                let unbias = if layout.group > 1 { m / (m - 1.0) } else { 1.0 };
                let rm = self
                    .params
                    .get_mut(&format!("layer{i}.running_mean"))
                    .expect("bn running mean");
                for (r, &mu) in rm.weight.data_mut().iter_mut().zip(mean.iter()) {
                    *r = (1.0 - momentum) * *r + momentum * mu as f32;
                }
                let rv = self
                    .params
                    .get_mut(&format!("layer{i}.running_var"))
                    .expect("bn running var");
                for (r, &v) in rv.weight.data_mut().iter_mut().zip(var.iter()) {
                    *r = (1.0 - momentum) * *r + momentum * (v * unbias) as f32;
                }
                cache.push(LayerCache::BatchNorm { xhat, inv_std });
                y
            }
        })
    }

    /// Backward pass; writes fresh gradients into every trainable entry.
    /// `dlogits` is the loss gradient w.r.t. the forward output.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Tensor) -> Result<()> {
        if cache.items.len() != self.spec.layers.len() {
            return Err(Error::usage(
                "forward cache does not match this model's layer count",
            ));
        }
        if dlogits.shape()[0] != cache.batch {
            return Err(Error::usage(
                "dlogits batch size does not match the cached forward",
            ));
        }
        self.params.zero_gradients();
        let mut dy = dlogits.clone();
        let layer_specs = self.spec.layers.clone();
        for (i, layer) in layer_specs.iter().enumerate().rev() {
            let item = &cache.items[i];
            dy = match (layer, item) {
                (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                    let w = self.weight(&format!("layer{i}.weight")).clone();
                    let mut dw = Tensor::zeros(w.shape());
                    let mut db =
                        Tensor::zeros(self.weight(&format!("layer{i}.bias")).shape());
                    let dx = layers::dense_backward(input, &w, &dy, &mut dw, &mut db);
                    self.store_grad(&format!("layer{i}.weight"), dw);
                    self.store_grad(&format!("layer{i}.bias"), db);
                    dx
                }
                (LayerSpec::Relu, LayerCache::Relu { input }) => {
                    layers::relu_backward(input, &dy)
                }
                (LayerSpec::Conv2d { stride, pad, .. }, LayerCache::Conv2d { input }) => {
                    let w = self.weight(&format!("layer{i}.weight")).clone();
                    let mut dw = Tensor::zeros(w.shape());
                    let mut db =
                        Tensor::zeros(self.weight(&format!("layer{i}.bias")).shape());
                    let dx =
                        layers::conv2d_backward(input, &w, &dy, *stride, *pad, &mut dw, &mut db);
                    self.store_grad(&format!("layer{i}.weight"), dw);
                    self.store_grad(&format!("layer{i}.bias"), db);
                    dx
                }
                (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => {
                    layers::flatten_backward(input_shape, &dy)
                }
                (
                    LayerSpec::BatchNorm { features, .. },
                    LayerCache::BatchNorm { xhat, inv_std },
                ) => {
                    let layout = layers::bn_layout(xhat, *features)?;
                    let gamma = self.weight(&format!("layer{i}.gamma")).clone();
                    let mut dgamma = Tensor::zeros(gamma.shape());
                    let mut dbeta = Tensor::zeros(gamma.shape());
                    let dx = layers::bn_backward(
                        xhat, inv_std, &layout, &gamma, &dy, &mut dgamma, &mut dbeta,
                    );
                    self.store_grad(&format!("layer{i}.gamma"), dgamma);
                    self.store_grad(&format!("layer{i}.beta"), dbeta);
                    dx
                }
                _ => {
                    return Err(Error::usage(format!(
                        "cache entry {i} does not match layer {layer:?}"
                    )))
                }
            };
        }
        Ok(())
    }

    fn store_grad(&mut self, name: &str, grad: Tensor) {
        let entry = self.params.get_mut(name).expect("parameter exists");
        debug_assert_eq!(entry.kind, ParamKind::Trainable);
        entry.gradient = grad;
    }
}

#[cfg(test)]
mod tests;
