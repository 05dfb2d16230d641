//! Teacher-student text classification with a Gaussian-mixture guided latent loss.
//!
//! A dual-decoder convolutional network (the teacher) is trained first; a
//! diagonal Gaussian mixture fitted to its `latent ‖ logits` features then
//! supplies per-sample alignment probabilities and teacher-student distances
//! that modulate the student's classification loss.

pub mod baselines;
mod container;
pub mod config;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod gmm;
pub mod losses;
pub mod neuralnet;
pub mod synth;
pub mod trainer;
pub mod vectorize;

pub use container::sha256_hex;
pub use error::{Error, Result};
