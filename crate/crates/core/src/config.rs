//! Run configuration: a flat `section.key = value` text format layered over
//! typed defaults.
//!
//! Values are parsed according to the type of the default they replace, so a
//! key that does not exist in [`RunConfig::default`] is rejected. Lists are
//! comma separated. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::corpus::{CsvSchema, LabelSet, SplitSpec, DEFAULT_LABELS};
use crate::distill::{DistMode, DistillConfig, PMode};
use crate::error::{Error, Result};
use crate::gmm::FitConfig;
use crate::losses::LossConfig;
use crate::neuralnet::NetworkConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub id_column: String,
    pub text_column: String,
    pub label_column: String,
    pub labels: Vec<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let schema = CsvSchema::default();
        CorpusSection {
            id_column: schema.id,
            text_column: schema.text,
            label_column: schema.label,
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CorpusSection {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            id: self.id_column.clone(),
            text: self.text_column.clone(),
            label: self.label_column.clone(),
        }
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(self.labels.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub k_folds: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_fraction: 0.2,
            k_folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSection {
    pub min_freq: usize,
    pub max_len: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            min_freq: crate::vectorize::DEFAULT_MIN_FREQ,
            max_len: crate::vectorize::DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub embed_dim: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub latent_dim: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::new(2, 2, 1);
        NetworkSection {
            embed_dim: d.embed_dim,
            conv_channels: d.conv_channels,
            kernel_size: d.kernel_size,
            latent_dim: d.latent_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub p_mode: PMode,
    pub dist_mode: DistMode,
    pub dist_normalize: bool,
    pub stop_gradient_signals: bool,
    /// Mixture size; 0 means one component per class.
    pub components: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    /// Write `signals_epochN.csv` every this many student epochs; 0 disables.
    pub dump_signals_every: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        let fit = FitConfig::default();
        DistillSection {
            p_mode: PMode::default(),
            dist_mode: DistMode::default(),
            dist_normalize: false,
            stop_gradient_signals: false,
            components: 0,
            gmm_max_iter: fit.max_iter,
            gmm_tol: fit.tol,
            dump_signals_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub lr_grid: Vec<f64>,
    pub l2_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            lr_grid: vec![0.5, 2.0],
            l2_grid: vec![0.0, 1e-4],
            epochs: 30,
            batch_size: 32,
            folds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { n: 2000 }
    }
}

/// Every tunable of a run. The output directory is not part of it, so moving
/// a run does not change its digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub split: SplitSection,
    pub vocab: VocabSection,
    pub network: NetworkSection,
    pub loss: LossConfig,
    pub distill: DistillSection,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub baseline: BaselineSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            corpus: CorpusSection::default(),
            split: SplitSection::default(),
            vocab: VocabSection::default(),
            network: NetworkSection::default(),
            loss: LossConfig::default(),
            distill: DistillSection::default(),
            teacher: TrainConfig::teacher(),
            student: TrainConfig::student(),
            baseline: BaselineSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    /// Sizes that train the full pipeline on a few thousand short documents
    /// within minutes on one core.
    pub fn desk() -> Self {
        let mut cfg = RunConfig::default();
        cfg.vocab.max_len = 32;
        cfg.network = NetworkSection {
            embed_dim: 24,
            conv_channels: 24,
            kernel_size: 3,
            latent_dim: 16,
        };
        cfg.teacher.epochs = 20;
        cfg.teacher.lr = 0.05;
        cfg.student.epochs = 10;
        cfg.student.lr = 0.05;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(RunConfig::default()),
            "desk" => Ok(RunConfig::desk()),
            other => Err(Error::Config(format!("unknown preset {other:?} (full, desk)"))),
        }
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Sets one dotted key, typed by its current value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        }
        if slot.is_object() {
            return Err(Error::Config(format!("{key:?} is a section, not a key")));
        }
        *slot = parse_like(slot, value).map_err(|msg| Error::Config(format!("{key}: {msg}")))?;
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let labels = self.corpus.label_set()?;
        self.loss.validate(labels.len())?;
        self.teacher.validate("teacher")?;
        self.student.validate("student")?;
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config("split.test_fraction must lie in (0, 1)".into()));
        }
        if self.split.k_folds < 2 || self.baseline.folds < 2 {
            return Err(Error::Config("fold counts must be at least 2".into()));
        }
        if self.vocab.max_len == 0 || self.vocab.min_freq == 0 {
            return Err(Error::Config("vocab.max_len and vocab.min_freq must be positive".into()));
        }
        if self.baseline.lr_grid.is_empty() || self.baseline.l2_grid.is_empty() {
            return Err(Error::Config("baseline grids must not be empty".into()));
        }
        if self.baseline.batch_size == 0 {
            return Err(Error::Config("baseline.batch_size must be positive".into()));
        }
        self.network_config(2, labels.len()).validate()
    }

    /// One `key = value` line per setting, keys sorted.
    pub fn canonical(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = String::new();
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of [`RunConfig::canonical`].
    pub fn digest(&self) -> String {
        crate::sha256_hex(self.canonical().as_bytes())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.split.test_fraction,
            k_folds: Some(self.split.k_folds),
            seed: self.seed,
        }
    }

    pub fn network_config(&self, vocab_size: usize, num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            vocab_size,
            embed_dim: self.network.embed_dim,
            conv_channels: self.network.conv_channels,
            kernel_size: self.network.kernel_size,
            latent_dim: self.network.latent_dim,
            num_classes,
            max_len: self.vocab.max_len,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            p_mode: self.distill.p_mode,
            dist_mode: self.distill.dist_mode,
            dist_normalize: self.distill.dist_normalize,
            stop_gradient_signals: self.distill.stop_gradient_signals,
            components: (self.distill.components > 0).then_some(self.distill.components),
            fit: FitConfig {
                max_iter: self.distill.gmm_max_iter,
                tol: self.distill.gmm_tol,
                seed: self.seed,
            },
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), render(other))),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn parse_scalar(like: Option<&Value>, raw: &str) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    let float = |raw: &str| raw.parse::<f64>().ok().and_then(Number::from_f64).map(Value::Number);
    match like {
        Some(Value::Bool(_)) => raw
            .parse::<bool>()
            .map(Value::Bool)
            .map_err(|_| format!("expected true or false, got {raw:?}")),
        Some(Value::Number(n)) if n.is_f64() => float(raw).ok_or_else(|| format!("expected a number, got {raw:?}")),
        Some(Value::Number(_)) => raw
            .parse::<u64>()
            .map(|v| Value::Number(v.into()))
            .map_err(|_| format!("expected a non-negative integer, got {raw:?}")),
        Some(Value::String(_)) => Ok(Value::String(raw.to_string())),
        _ => Ok(float(raw).unwrap_or_else(|| Value::String(raw.to_string()))),
    }
}

fn parse_like(current: &Value, raw: &str) -> std::result::Result<Value, String> {
    match current {
        Value::Array(_) if raw.trim().is_empty() => Ok(Value::Array(Vec::new())),
        Value::Array(items) => raw
            .split(',')
            .map(|part| parse_scalar(items.first(), part))
            .collect::<std::result::Result<_, _>>()
            .map(Value::Array),
        other => parse_scalar(Some(other), raw),
    }
}
