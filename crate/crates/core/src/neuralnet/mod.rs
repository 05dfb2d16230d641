//! The dual-decoder convolutional text network.
//!
//! `embedding -> [conv -> batch-norm -> relu] x2 -> global max-pool -> latent`,
//! followed by a classification head and a reconstruction head that both read
//! the latent vector. Forward and backward passes are written out by hand for
//! this one graph; every layer is also exposed in [`layers`] so it can be
//! gradient-checked on its own.

mod checkpoint;
pub mod layers;
mod network;
mod optim;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use network::{
    BnBatchStats, ForwardOutput, Gradients, Mode, Network, NetworkConfig, OutputGrads, Params,
    Weights,
};
pub use optim::{sgd_step, Sgd};
pub use tensor::Tensor;

/// Floating-point element type of network parameters and activations.
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Concatenation `latent ‖ logits` of one sample, in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(latent: &[f64], logits: &[f64]) -> Self {
        let mut values = Vec::with_capacity(latent.len() + logits.len());
        values.extend_from_slice(latent);
        values.extend_from_slice(logits);
        FeatureVector { values }
    }

    pub fn latent(&self, latent_dim: usize) -> &[f64] {
        &self.values[..latent_dim]
    }

    pub fn logits(&self, latent_dim: usize) -> &[f64] {
        &self.values[latent_dim..]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
