use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkConfig, Params, Weights};
use crate::container;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LGN1";
const FORMAT_VERSION: u32 = 1;

/// Provenance recorded next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_digest: String,
    pub labels: Vec<String>,
    pub vocab_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: NetworkConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// A saved `f32` network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub meta: CheckpointMeta,
    pub params: Params<f32>,
}

impl Checkpoint {
    pub fn new(network: &Network<f32>, meta: CheckpointMeta) -> Self {
        Checkpoint {
            config: network.config.clone(),
            meta,
            params: network.params.clone(),
        }
    }

    pub fn network(&self) -> Network<f32> {
        Network {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        for (name, t) in self.params.named() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
                offset: blob.len(),
            });
            blob.extend(container::f32_bytes(t.data.iter().copied()));
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        container::encode(MAGIC, &header, &blob)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, blob): (Header, &[u8]) = container::decode(bytes, MAGIC)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        header.config.validate()?;
        let mut params = Params {
            weights: Weights::zeros(&header.config),
            bn1_running_mean: super::Tensor::zeros(&[header.config.conv_channels]),
            bn1_running_var: super::Tensor::zeros(&[header.config.conv_channels]),
            bn2_running_mean: super::Tensor::zeros(&[header.config.conv_channels]),
            bn2_running_var: super::Tensor::zeros(&[header.config.conv_channels]),
        };
        let slots = params.named_mut();
        if slots.len() != header.tensors.len() {
            return Err(Error::Shape(format!(
                "manifest lists {} tensors, expected {}",
                header.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), entry) in slots.into_iter().zip(&header.tensors) {
            if entry.name != name || entry.shape != slot.shape {
                return Err(Error::Shape(format!(
                    "manifest entry {} {:?} does not match {} {:?} implied by the config",
                    entry.name, entry.shape, name, slot.shape
                )));
            }
            let bytes = slot.len() * 4;
            let chunk = entry
                .offset
                .checked_add(bytes)
                .and_then(|end| blob.get(entry.offset..end))
                .ok_or_else(|| Error::Format(format!("blob truncated inside tensor {name}")))?;
            slot.data = container::read_f32s(chunk)?;
        }
        Ok(Checkpoint {
            config: header.config,
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    /// Fails with a shape error when the embedding table does not match `vocab_size`.
    pub fn ensure_vocab_size(&self, vocab_size: usize) -> Result<()> {
        if self.config.vocab_size != vocab_size {
            return Err(Error::Shape(format!(
                "checkpoint embeds {} tokens, vocabulary has {vocab_size}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}
