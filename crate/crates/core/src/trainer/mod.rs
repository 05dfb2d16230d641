//! Teacher and student training loops, evaluation metrics and the k-fold driver.

mod metrics;
mod objective;
pub mod pipeline;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::SignalContext;
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, TrainSchedule};
use crate::neuralnet::{Mode, Network, NetworkConfig, Sgd};
use crate::vectorize::TokenSequence;

pub use metrics::{Averages, ClassMetrics, MetricsReport};
pub use objective::{objective, BatchTerms, Objective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient L2 norm cap; 0 disables clipping.
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn teacher() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 0.01,
            batch_size: 32,
            momentum: 0.0,
            weight_decay: 0.0,
            clip_norm: 5.0,
        }
    }

    pub fn student() -> Self {
        TrainConfig {
            epochs: 500,
            ..Self::teacher()
        }
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("{section}.epochs and {section}.batch_size must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("{section}: lr must be > 0, momentum, weight_decay and clip_norm >= 0")));
        }
        Ok(())
    }
}

/// One row of `training_log.csv`. Components are sample-weighted epoch means;
/// `total` and `modulation` are composed from those means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub base: f64,
    pub latentg_mean: f64,
    pub mse: f64,
    pub total: f64,
    pub modulation: f64,
    pub train_accuracy: f64,
}

pub fn write_training_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Stepwise mini-batch SGD over a fixed training set.
pub struct Trainer<'a> {
    net: Network<f32>,
    opt: Sgd<f32>,
    cfg: TrainConfig,
    loss: &'a LossConfig,
    signals: Option<SignalContext<'a>>,
    seqs: &'a [TokenSequence],
    labels: &'a [usize],
    order: Vec<usize>,
    rng: ChaCha8Rng,
    epoch: usize,
    log: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net: Network<f32>,
        cfg: &TrainConfig,
        loss: &'a LossConfig,
        signals: Option<SignalContext<'a>>,
        seqs: &'a [TokenSequence],
        labels: &'a [usize],
        seed: u64,
    ) -> Result<Self> {
        cfg.validate("train")?;
        loss.validate(net.config.num_classes)?;
        if seqs.is_empty() || seqs.len() != labels.len() {
            return Err(Error::Contract(format!(
                "need a non-empty training set with one label per sequence ({} vs {})",
                seqs.len(),
                labels.len()
            )));
        }
        if let Some(ctx) = &signals {
            if ctx.store.dim != net.config.feature_dim() || ctx.store.latent_dim != net.config.latent_dim {
                return Err(Error::Shape(format!(
                    "teacher features have dimension {} (latent {}), student produces {} (latent {})",
                    ctx.store.dim,
                    ctx.store.latent_dim,
                    net.config.feature_dim(),
                    net.config.latent_dim
                )));
            }
            ctx.check_coverage(seqs.iter().map(|s| s.id))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Trainer {
            net,
            opt: Sgd::new(cfg.lr)
                .with_momentum(cfg.momentum)
                .with_weight_decay(cfg.weight_decay)
                .with_clip_norm(cfg.clip_norm),
            cfg: cfg.clone(),
            loss,
            signals,
            seqs,
            labels,
            order: (0..seqs.len()).collect(),
            rng,
            epoch: 0,
            log: Vec::new(),
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.is_done() {
            return Err(Error::State(format!("all {} epochs already ran", self.cfg.epochs)));
        }
        let epoch = self.epoch + 1;
        let schedule = TrainSchedule::new(epoch, self.cfg.epochs)?;
        let obj = Objective {
            loss: self.loss,
            signals: self.signals,
            schedule,
        };
        self.order.shuffle(&mut self.rng);
        let n = self.seqs.len();
        let (mut base, mut lg, mut mse, mut correct) = (0.0, 0.0, 0.0, 0usize);
        let order = std::mem::take(&mut self.order);
        for chunk in order.chunks(self.cfg.batch_size) {
            let seqs: Vec<TokenSequence> = chunk.iter().map(|&i| self.seqs[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| self.labels[i]).collect();
            let out = self.net.forward(&seqs, Mode::Train)?;
            let (terms, upstream) = match objective(&self.net, &out, &seqs, &labels, &obj) {
                Ok(v) => v,
                Err(Error::Numeric(what)) => {
                    self.order = order;
                    return Err(Error::Divergence(format!("epoch {epoch}: {what}")));
                }
                Err(e) => {
                    self.order = order;
                    return Err(e);
                }
            };
            if !terms.total.is_finite() {
                self.order = order;
                return Err(Error::Divergence(format!("epoch {epoch}: non-finite loss {}", terms.total)));
            }
            correct += out.predictions().iter().zip(&labels).filter(|(p, y)| p == y).count();
            let w = chunk.len() as f64;
            base += terms.base * w;
            lg += terms.latentg_mean * w;
            mse += terms.mse * w;
            let grads = self.net.backward(&out, &upstream, false)?;
            if let Err(e) = self.opt.step(&mut self.net.params, &grads) {
                self.order = order;
                return Err(match e {
                    Error::Divergence(what) => Error::Divergence(format!("epoch {epoch}: {what}")),
                    other => other,
                });
            }
        }
        self.order = order;
        let nf = n as f64;
        let (base, lg, mse) = (base / nf, lg / nf, mse / nf);
        let record = EpochRecord {
            epoch,
            base,
            latentg_mean: lg,
            mse,
            total: losses::total_loss(base, lg, mse, &schedule, self.loss.gamma),
            modulation: losses::modulation(lg, &schedule),
            train_accuracy: correct as f64 / nf,
        };
        self.epoch = epoch;
        self.log.push(record);
        Ok(record)
    }

    pub fn run(mut self) -> Result<TrainRun> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainRun {
        TrainRun {
            network: self.net,
            log: self.log,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub network: Network<f32>,
    pub log: Vec<EpochRecord>,
}

/// Minimizes `base + gamma * mse` from a seeded initialization.
pub fn train_teacher(
    seqs: &[TokenSequence],
    labels: &[usize],
    net_cfg: NetworkConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainRun> {
    let net = Network::init(net_cfg, seed)?;
    Trainer::new(net, cfg, loss, None, seqs, labels, seed)?.run()
}

/// Minimizes `base * (1 + e/E * latentg) + gamma * mse` against frozen
/// teacher features and mixture. Initialization matches [`train_teacher`]
/// under the same seed.
pub fn train_student(
    seqs: &[TokenSequence],
    labels: &[usize],
    net_cfg: NetworkConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
    ctx: SignalContext,
    seed: u64,
) -> Result<TrainRun> {
    let net = Network::init(net_cfg, seed)?;
    Trainer::new(net, cfg, loss, Some(ctx), seqs, labels, seed)?.run()
}

/// Eval-mode arg-max predictions.
pub fn predict(net: &Network<f32>, seqs: &[TokenSequence]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(256) {
        out.extend(net.forward(chunk, Mode::Eval)?.predictions());
    }
    Ok(out)
}

pub fn evaluate(net: &Network<f32>, seqs: &[TokenSequence], labels: &[usize], names: &[String]) -> Result<MetricsReport> {
    if seqs.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty corpus".into()));
    }
    if names.len() != net.config.num_classes {
        return Err(Error::Shape(format!(
            "{} label names for a {}-class network",
            names.len(),
            net.config.num_classes
        )));
    }
    MetricsReport::from_predictions(labels, &predict(net, seqs)?, names)
}
