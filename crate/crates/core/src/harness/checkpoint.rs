//! Binary checkpoint format.
//!
//! Little-endian layout: magic "PSWA", u32 version, u32 tensor count,
//! then per tensor (u16 name length, name bytes, u8 rank, rank x u32
//! dims, raw f32 payload), and a trailing 32-byte config hash.
//!
//! Everything is a named tensor: model parameters under their own names,
//! optimizer state under `optim.*`, and the epoch counter as
//! `meta.epoch`, so the layout needs no side tables.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::optim::Optimizer;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSWA";
pub const CHECKPOINT_VERSION: u32 = 1;

const EPOCH_KEY: &str = "meta.epoch";
const ADAM_STEP_KEY: &str = "optim.adam_t";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: Vec<(String, Tensor)>,
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Number of completed epochs at save time.
    pub fn epoch(&self) -> Result<usize> {
        let t = self
            .get(EPOCH_KEY)
            .ok_or_else(|| Error::format("checkpoint is missing meta.epoch"))?;
        Ok(t.data()[0] as usize)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            let bytes = name.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.config_hash);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::format(format!(
                    "checkpoint truncated at byte offset {}",
                    *pos
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format("bad checkpoint magic"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| Error::format("checkpoint tensor name is not UTF-8"))?
                .to_string();
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let payload = take(&mut pos, n * 4)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        let hash_bytes = take(&mut pos, 32)?;
        if pos != bytes.len() {
            return Err(Error::format(format!(
                "checkpoint has {} trailing bytes past offset {pos}",
                bytes.len() - pos
            )));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(hash_bytes);
        Ok(Checkpoint {
            version,
            tensors,
            config_hash,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)
            .map_err(|e| Error::format(format!("cannot read {}: {e}", path.display())))?;
        Checkpoint::decode(&bytes)
    }
}

fn scalar(v: f32) -> Tensor {
    Tensor::from_vec(&[1], vec![v]).expect("scalar tensor")
}

/// Snapshots model parameters (including BN running stats), optimizer
/// state, and the completed-epoch counter.
pub fn build_checkpoint(
    model: &Model,
    optimizer: &Optimizer,
    epoch: usize,
    config_hash: [u8; 32],
) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(n, e)| (n.to_string(), e.weight.clone()))
        .collect();
    match optimizer {
        Optimizer::Sgd(state) => {
            for (name, entry) in model.params().trainable() {
                let v = state
                    .velocity()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_else(|| Tensor::zeros(entry.weight.shape()));
                tensors.push((format!("optim.velocity.{name}"), v));
            }
        }
        Optimizer::Adam(state) => {
            for (name, entry) in model.params().trainable() {
                let (m, v) = state
                    .moments()
                    .find(|(n, _, _)| *n == name)
                    .map(|(_, m, v)| (m.clone(), v.clone()))
                    .unwrap_or_else(|| {
                        (
                            Tensor::zeros(entry.weight.shape()),
                            Tensor::zeros(entry.weight.shape()),
                        )
                    });
                tensors.push((format!("optim.adam_m.{name}"), m));
                tensors.push((format!("optim.adam_v.{name}"), v));
            }
            tensors.push((ADAM_STEP_KEY.to_string(), scalar(state.step_count as f32)));
        }
    }
    tensors.push((EPOCH_KEY.to_string(), scalar(epoch as f32)));
    Checkpoint {
        version: CHECKPOINT_VERSION,
        tensors,
        config_hash,
    }
}

/// Restores model parameters and optimizer state in place; returns the
/// completed-epoch counter.
pub fn apply_checkpoint(
    ckpt: &Checkpoint,
    model: &mut Model,
    optimizer: &mut Optimizer,
) -> Result<usize> {
    for (name, entry) in model.params_mut().iter_mut() {
        let t = ckpt.get(name).ok_or_else(|| {
            Error::format(format!("checkpoint is missing parameter '{name}'"))
        })?;
        if t.shape() != entry.weight.shape() {
            return Err(Error::usage(format!(
                "checkpoint parameter '{name}' has shape {:?}, model wants {:?}",
                t.shape(),
                entry.weight.shape()
            )));
        }
        entry.weight = t.clone();
    }
    match optimizer {
        Optimizer::Sgd(state) => {
            for (name, _) in model.params().trainable() {
                let key = format!("optim.velocity.{name}");
                let t = ckpt.get(&key).ok_or_else(|| {
                    Error::usage(format!("checkpoint has no SGD state '{key}'"))
                })?;
                state.set_velocity(name, t.clone());
            }
        }
        Optimizer::Adam(state) => {
            for (name, _) in model.params().trainable() {
                let mk = format!("optim.adam_m.{name}");
                let vk = format!("optim.adam_v.{name}");
                let m = ckpt
                    .get(&mk)
                    .ok_or_else(|| Error::usage(format!("checkpoint has no Adam state '{mk}'")))?;
                let v = ckpt
                    .get(&vk)
                    .ok_or_else(|| Error::usage(format!("checkpoint has no Adam state '{vk}'")))?;
                state.set_moments(name, m.clone(), v.clone());
            }
            let t = ckpt
                .get(ADAM_STEP_KEY)
                .ok_or_else(|| Error::usage("checkpoint has no Adam step count"))?;
            state.step_count = t.data()[0] as u64;
        }
    }
    ckpt.epoch()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, ModelSpec};
    use crate::optim::SgdState;
    use crate::rng::{stream, Purpose};

    fn model() -> Model {
        let spec = ModelSpec {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Dense { in_dim: 3, out_dim: 4 },
                LayerSpec::batchnorm(4),
            ],
        };
        Model::new(spec, &mut stream(1, Purpose::Init, 0)).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let m = model();
        let opt = Optimizer::Sgd(SgdState::new(0.9, 5e-4));
        let ckpt = build_checkpoint(&m, &opt, 3, [7u8; 32]);
        let bytes = ckpt.encode();
        let decoded = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(decoded.encode(), bytes);
        assert_eq!(decoded.epoch().unwrap(), 3);
        assert_eq!(decoded.config_hash, [7u8; 32]);
    }

    #[test]
    fn roundtrip_restores_tensors_bit_exactly() {
        let m = model();
        let opt = Optimizer::Sgd(SgdState::new(0.9, 0.0));
        let ckpt = build_checkpoint(&m, &opt, 1, [0u8; 32]);
        let decoded = Checkpoint::decode(&ckpt.encode()).unwrap();
        let mut m2 = model();
        let mut opt2 = Optimizer::Sgd(SgdState::new(0.9, 0.0));
        apply_checkpoint(&decoded, &mut m2, &mut opt2).unwrap();
        for (name, entry) in m.params().iter() {
            assert!(m2.params().get(name).unwrap().weight.bit_eq(&entry.weight));
        }
    }

    #[test]
    fn corrupt_magic_is_format_error() {
        let m = model();
        let opt = Optimizer::Sgd(SgdState::new(0.0, 0.0));
        let mut bytes = build_checkpoint(&m, &opt, 0, [0u8; 32]).encode();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let m = model();
        let opt = Optimizer::Sgd(SgdState::new(0.0, 0.0));
        let bytes = build_checkpoint(&m, &opt, 0, [0u8; 32]).encode();
        let err = Checkpoint::decode(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let m = model();
        let opt = Optimizer::Sgd(SgdState::new(0.0, 0.0));
        let mut bytes = build_checkpoint(&m, &opt, 0, [0u8; 32]).encode();
        bytes[4] = 9;
        let err = Checkpoint::decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn shape_mismatch_on_apply_is_usage_error() {
        let m = model();
        let opt = Optimizer::Sgd(SgdState::new(0.0, 0.0));
        let ckpt = build_checkpoint(&m, &opt, 0, [0u8; 32]);
        let spec = ModelSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Dense { in_dim: 3, out_dim: 5 }],
        };
        let mut other = Model::new(spec, &mut stream(2, Purpose::Init, 0)).unwrap();
        let mut opt2 = Optimizer::Sgd(SgdState::new(0.0, 0.0));
        assert!(apply_checkpoint(&ckpt, &mut other, &mut opt2).is_err());
    }
}
