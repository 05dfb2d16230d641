//! The output directory: artifact paths, prerequisite checks and the
//! `artifacts.json` manifest.
//!
//! The manifest maps each relative artifact path to its SHA-256, the digest of
//! the config that produced it and the producing subcommand. Entries from
//! earlier subcommands are kept; a rerun replaces its own entries.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use latentg::config::RunConfig;

use crate::Invalid;

pub const MANIFEST: &str = "artifacts.json";
pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";

pub const CORPUS: &str = "corpus.csv";
pub const CLEANED: &str = "cleaned.csv";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const VOCAB: &str = "vocab.txt";
pub const TEACHER_FEATURES: &str = "teacher_features.bin";
pub const GMM: &str = "gmm.bin";

pub fn model_path(role: &str) -> String {
    format!("{role}/model.ckpt")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub sha256: String,
    pub config_digest: String,
    pub producer: String,
}

#[derive(Default, Serialize, Deserialize)]
struct Manifest {
    artifacts: BTreeMap<String, Entry>,
}

pub struct Workspace {
    root: PathBuf,
    digest: String,
    manifest: Manifest,
    written: Vec<(String, String)>,
}

impl Workspace {
    /// Creates the directory if needed and records the effective config.
    pub fn open(root: &Path, cfg: &RunConfig) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let manifest_path = root.join(MANIFEST);
        let manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path)?;
            serde_json::from_str(&text).with_context(|| format!("reading {}", manifest_path.display()))?
        } else {
            Manifest::default()
        };
        let digest = cfg.digest();
        let text = format!("# config digest {digest}\n{}", cfg.canonical());
        fs::write(root.join(EFFECTIVE_CONFIG), text)?;
        Ok(Workspace {
            root: root.to_path_buf(),
            digest,
            manifest,
            written: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Path of an input artifact, or an error naming the subcommand that
    /// produces it.
    pub fn require(&self, rel: &str, producer: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(rel);
        if !p.is_file() {
            return Err(Invalid(format!(
                "missing {} in {}; run `latentg {producer}` first",
                rel,
                self.root.display()
            ))
            .into());
        }
        Ok(p)
    }

    /// Path for an output artifact; parent directories are created.
    pub fn output(&mut self, rel: &str, producer: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        self.written.push((rel.to_string(), producer.to_string()));
        Ok(p)
    }

    /// Hashes everything written by this run into the manifest.
    pub fn finish(mut self) -> anyhow::Result<()> {
        for (rel, producer) in std::mem::take(&mut self.written) {
            let bytes = fs::read(self.path(&rel)).with_context(|| format!("hashing {rel}"))?;
            self.manifest.artifacts.insert(
                rel,
                Entry {
                    sha256: latentg::sha256_hex(&bytes),
                    config_digest: self.digest.clone(),
                    producer,
                },
            );
        }
        let json = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.root.join(MANIFEST), json)?;
        Ok(())
    }
}
