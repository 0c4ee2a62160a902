//! A compact neural-network framework where learning is driven by
//! burst-dependent plasticity: feedback weights carry "burst" rates backward,
//! and the gap between taught and teacher-free bursting steers each weight.
//!
//! The crate bundles:
//! - [`tensor`] — dense f64 tensors, conv2d and its adjoint/weight-grad kernels
//! - [`burst`] — burst-propagation dense and convolutional layers
//! - [`baseline`] — backprop layers with identical forward semantics
//! - [`model`] — the unimodal/multimodal mask-reconstruction architectures
//! - [`loss_opt`] — weighted binary cross-entropy and Adam with decoupled decay
//! - [`data`] — a seeded synthetic audio-visual benchmark with ideal binary masks
//! - [`metrics`] — F1/accuracy, firing-rate energy, and energy AUC
//! - [`cli`] — dataset generation, training, comparison and mask-dump commands

pub mod baseline;
pub mod burst;
pub mod cli;
pub mod data;
pub mod error;
pub mod loss_opt;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
