//! Periodic weight-sampling training techniques (PSWA, PWALKS, PSWM) and
//! their weight-averaging baselines, built on a minimal dense/conv/BN
//! kernel with explicit backprop.
//!
//! The crate also ships the surrounding laboratory: deterministic data
//! loaders and batch plans, a training harness with CSV metrics and binary
//! checkpoints, post-hoc accuracy analytics, convergence-bound checks for
//! projected convex problems, and 1-D loss-surface scans.

pub mod analytics;
pub mod config;
pub mod convex;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod surface;
pub mod tensor;
pub mod wsample;

pub use error::{Error, Result};
pub use tensor::Tensor;
