//! Classification, reconstruction and imbalance-aware losses, the latent
//! Gaussian term, and their composition into the training objective.
//!
//! All loss math runs in `f64`. Batch functions return the loss value together
//! with its gradient with respect to the logits (or predictions), already
//! scaled for the batch mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp for cross-entropy style logs.
pub const PROB_EPS: f64 = 1e-12;
/// Additive smoothing in Tversky and Dice ratios.
pub const SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    CrossEntropy,
    Focal,
    Tversky,
    Dice,
}

impl std::str::FromStr for BaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" | "cross_entropy" => Ok(BaseLoss::CrossEntropy),
            "focal" => Ok(BaseLoss::Focal),
            "tversky" => Ok(BaseLoss::Tversky),
            "dice" => Ok(BaseLoss::Dice),
            other => Err(Error::Config(format!("unknown base loss {other:?}"))),
        }
    }
}

/// How base and latent terms are combined over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// Batch means of base, latent term and MSE, composed once.
    #[default]
    BatchMean,
    /// `mean_i(base_i * (1 + f * latentg_i))`; only for CE and focal bases.
    PerSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub base_loss: BaseLoss,
    /// Scale on `(1 - p)`.
    pub alpha: f64,
    /// Scale on the teacher-student distance.
    pub beta: f64,
    /// Scale on the reconstruction MSE.
    pub gamma: f64,
    /// Per-class focal weights; empty means 1 for every class.
    pub focal_alpha_t: Vec<f64>,
    pub focal_gamma: f64,
    pub tversky_alpha: f64,
    pub tversky_beta: f64,
    pub composition: Composition,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            base_loss: BaseLoss::CrossEntropy,
            alpha: 0.56,
            beta: 0.44,
            gamma: 75.0,
            focal_alpha_t: Vec::new(),
            focal_gamma: 2.0,
            tversky_alpha: 0.3,
            tversky_beta: 0.7,
            composition: Composition::BatchMean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let nonneg = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("focal_gamma", self.focal_gamma),
            ("tversky_alpha", self.tversky_alpha),
            ("tversky_beta", self.tversky_beta),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !self.focal_alpha_t.is_empty() {
            if self.focal_alpha_t.len() != num_classes {
                return Err(Error::Config(format!(
                    "loss.focal_alpha_t has {} weights for {num_classes} classes",
                    self.focal_alpha_t.len()
                )));
            }
            if self.focal_alpha_t.iter().any(|&a| !(a >= 0.0)) {
                return Err(Error::Config("loss.focal_alpha_t weights must be >= 0".into()));
            }
        }
        if self.composition == Composition::PerSample
            && matches!(self.base_loss, BaseLoss::Tversky | BaseLoss::Dice)
        {
            return Err(Error::Config(
                "per-sample composition needs a per-sample base loss (cross_entropy or focal)".into(),
            ));
        }
        Ok(())
    }

    pub fn focal_weight(&self, class: usize) -> f64 {
        self.focal_alpha_t.get(class).copied().unwrap_or(1.0)
    }
}

/// Current epoch `e` (1-based) out of `E`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub current_epoch: usize,
    pub total_epochs: usize,
}

impl TrainSchedule {
    pub fn new(current_epoch: usize, total_epochs: usize) -> Result<Self> {
        if total_epochs == 0 || current_epoch == 0 || current_epoch > total_epochs {
            return Err(Error::Config(format!(
                "epoch {current_epoch} outside 1..={total_epochs}"
            )));
        }
        Ok(TrainSchedule {
            current_epoch,
            total_epochs,
        })
    }

    /// `e / E`.
    pub fn factor(&self) -> f64 {
        self.current_epoch as f64 / self.total_epochs as f64
    }
}

/// Soft per-class counts from predicted probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftConfusion {
    pub tp: Vec<f64>,
    pub fp: Vec<f64>,
    pub fn_: Vec<f64>,
}

/// Loss value and its gradient with respect to the input it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

// ------------------------------------------------------------ primitives

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite logits".into()))
    }
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::Config("cross-entropy needs at least 2 classes".into()));
    }
    check_finite(logits)?;
    Ok(log_sum_exp(logits) - logits[target])
}

/// Mean of squared differences.
pub fn mse(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::Dimension {
            expected: prediction.len(),
            got: target.len(),
        });
    }
    if prediction.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = prediction.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / prediction.len() as f64)
}

/// `-alpha_t (1 - p_t)^gamma ln p_t` with `p_t` clamped to `[eps, 1 - eps]`.
pub fn focal_loss(probs: &[f64], target: usize, alpha_t: f64, gamma: f64) -> f64 {
    let p = probs[target].clamp(PROB_EPS, 1.0 - PROB_EPS);
    -alpha_t * (1.0 - p).powf(gamma) * p.ln()
}

/// Per-class soft TP/FP/FN over a `[batch, k]` probability matrix.
pub fn soft_confusion(probs: &[f64], targets: &[usize], k: usize) -> SoftConfusion {
    let mut conf = SoftConfusion {
        tp: vec![0.0; k],
        fp: vec![0.0; k],
        fn_: vec![0.0; k],
    };
    for (row, &y) in probs.chunks_exact(k).zip(targets) {
        for (c, &p) in row.iter().enumerate() {
            if c == y {
                conf.tp[c] += p;
                conf.fn_[c] += 1.0 - p;
            } else {
                conf.fp[c] += p;
            }
        }
    }
    conf
}

/// Mean over classes of `1 - (tp + s) / (tp + a*fp + b*fn + s)`.
pub fn tversky_loss(conf: &SoftConfusion, alpha: f64, beta: f64) -> f64 {
    let k = conf.tp.len();
    (0..k)
        .map(|c| {
            let num = conf.tp[c] + SMOOTH;
            let den = conf.tp[c] + alpha * conf.fp[c] + beta * conf.fn_[c] + SMOOTH;
            1.0 - num / den
        })
        .sum::<f64>()
        / k as f64
}

/// Mean over classes of `1 - (2tp + 2s) / (2tp + fp + fn + 2s)`.
pub fn dice_loss(conf: &SoftConfusion) -> f64 {
    let k = conf.tp.len();
    (0..k)
        .map(|c| {
            let num = 2.0 * conf.tp[c] + 2.0 * SMOOTH;
            let den = 2.0 * conf.tp[c] + conf.fp[c] + conf.fn_[c] + 2.0 * SMOOTH;
            1.0 - num / den
        })
        .sum::<f64>()
        / k as f64
}

/// `alpha (1 - p) + beta * dist`.
pub fn latentg_term(p: f64, dist: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!(
            "latent term needs p in [0, 1], got {p}; check distill.p_mode"
        )));
    }
    if !(dist >= 0.0) {
        return Err(Error::Contract(format!("distance must be >= 0, got {dist}")));
    }
    Ok(alpha * (1.0 - p) + beta * dist)
}

/// `base * (1 + (e/E) * latentg) + gamma * mse`.
pub fn total_loss(base: f64, latentg: f64, mse: f64, schedule: &TrainSchedule, gamma: f64) -> f64 {
    base * modulation(latentg, schedule) + mse * gamma
}

/// `1 + (e/E) * latentg`, the factor applied to the base loss.
pub fn modulation(latentg: f64, schedule: &TrainSchedule) -> f64 {
    1.0 + schedule.factor() * latentg
}

// ------------------------------------------------------------ batch gradients

/// Pulls a gradient on probabilities back through the row softmax.
fn softmax_pullback(probs: &[f64], g_probs: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.chunks_exact(k).zip(g_probs.chunks_exact(k)) {
        let dotp: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(pj, gj)| pj * (gj - dotp)));
    }
    out
}

fn row_softmax(logits: &[f64], k: usize) -> Vec<f64> {
    logits.chunks_exact(k).flat_map(softmax).collect()
}

/// Per-sample cross-entropy values and `d value_i / d logits_i` (unscaled).
pub fn cross_entropy_rows(logits: &[f64], targets: &[usize], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_finite(logits)?;
    let mut values = Vec::with_capacity(targets.len());
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks_exact(k).zip(targets) {
        values.push(cross_entropy(row, y)?);
        let p = softmax(row);
        grads.extend(p.iter().enumerate().map(|(j, &pj)| pj - if j == y { 1.0 } else { 0.0 }));
    }
    Ok((values, grads))
}

/// Per-sample focal values and their logit gradients (unscaled).
pub fn focal_rows(
    logits: &[f64],
    targets: &[usize],
    k: usize,
    cfg: &LossConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_finite(logits)?;
    let gamma = cfg.focal_gamma;
    let mut values = Vec::with_capacity(targets.len());
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks_exact(k).zip(targets) {
        let probs = softmax(row);
        let a = cfg.focal_weight(y);
        values.push(focal_loss(&probs, y, a, gamma));
        let raw = probs[y];
        let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&raw);
        let dl_dp = if clamped {
            0.0
        } else {
            let q = 1.0 - raw;
            let focus = if gamma == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma - 1.0) * raw.ln()
            };
            -a * (q.powf(gamma) / raw - focus)
        };
        grads.extend(
            probs
                .iter()
                .enumerate()
                .map(|(j, &pj)| dl_dp * raw * (if j == y { 1.0 } else { 0.0 } - pj)),
        );
    }
    Ok((values, grads))
}

fn mean_rows(values: Vec<f64>, mut grads: Vec<f64>) -> LossGrad {
    let n = values.len().max(1) as f64;
    grads.iter_mut().for_each(|g| *g /= n);
    LossGrad {
        value: values.iter().sum::<f64>() / n,
        grad: grads,
    }
}

pub fn cross_entropy_batch(logits: &[f64], targets: &[usize], k: usize) -> Result<LossGrad> {
    let (v, g) = cross_entropy_rows(logits, targets, k)?;
    Ok(mean_rows(v, g))
}

pub fn focal_batch(logits: &[f64], targets: &[usize], k: usize, cfg: &LossConfig) -> Result<LossGrad> {
    let (v, g) = focal_rows(logits, targets, k, cfg)?;
    Ok(mean_rows(v, g))
}

/// Tversky loss on soft counts of the batch, gradient w.r.t. logits.
pub fn tversky_batch(logits: &[f64], targets: &[usize], k: usize, alpha: f64, beta: f64) -> Result<LossGrad> {
    check_finite(logits)?;
    let probs = row_softmax(logits, k);
    let conf = soft_confusion(&probs, targets, k);
    let value = tversky_loss(&conf, alpha, beta);
    let kf = k as f64;
    let mut d_tp = vec![0.0; k];
    let mut d_fp = vec![0.0; k];
    let mut d_fn = vec![0.0; k];
    for c in 0..k {
        let num = conf.tp[c] + SMOOTH;
        let den = conf.tp[c] + alpha * conf.fp[c] + beta * conf.fn_[c] + SMOOTH;
        let d2 = den * den;
        d_tp[c] = -(den - num) / d2 / kf;
        d_fp[c] = num * alpha / d2 / kf;
        d_fn[c] = num * beta / d2 / kf;
    }
    let g_probs = confusion_pullback(targets, k, &d_tp, &d_fp, &d_fn);
    Ok(LossGrad {
        value,
        grad: softmax_pullback(&probs, &g_probs, k),
    })
}

/// Dice loss on soft counts of the batch, gradient w.r.t. logits.
pub fn dice_batch(logits: &[f64], targets: &[usize], k: usize) -> Result<LossGrad> {
    check_finite(logits)?;
    let probs = row_softmax(logits, k);
    let conf = soft_confusion(&probs, targets, k);
    let value = dice_loss(&conf);
    let kf = k as f64;
    let mut d_tp = vec![0.0; k];
    let mut d_fp = vec![0.0; k];
    let mut d_fn = vec![0.0; k];
    for c in 0..k {
        let num = 2.0 * conf.tp[c] + 2.0 * SMOOTH;
        let den = 2.0 * conf.tp[c] + conf.fp[c] + conf.fn_[c] + 2.0 * SMOOTH;
        let d2 = den * den;
        d_tp[c] = -(2.0 * den - 2.0 * num) / d2 / kf;
        d_fp[c] = num / d2 / kf;
        d_fn[c] = num / d2 / kf;
    }
    let g_probs = confusion_pullback(targets, k, &d_tp, &d_fp, &d_fn);
    Ok(LossGrad {
        value,
        grad: softmax_pullback(&probs, &g_probs, k),
    })
}

fn confusion_pullback(targets: &[usize], k: usize, d_tp: &[f64], d_fp: &[f64], d_fn: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(targets.len() * k);
    for &y in targets {
        for c in 0..k {
            g.push(if c == y { d_tp[c] - d_fn[c] } else { d_fp[c] });
        }
    }
    g
}

/// Mean squared error over all elements with its gradient w.r.t. `prediction`.
pub fn mse_batch(prediction: &[f64], target: &[f64]) -> Result<LossGrad> {
    let value = mse(prediction, target)?;
    let n = prediction.len().max(1) as f64;
    Ok(LossGrad {
        value,
        grad: prediction.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / n).collect(),
    })
}

/// Batch-mean base loss selected by `cfg.base_loss`.
pub fn base_loss_batch(cfg: &LossConfig, logits: &[f64], targets: &[usize], k: usize) -> Result<LossGrad> {
    match cfg.base_loss {
        BaseLoss::CrossEntropy => cross_entropy_batch(logits, targets, k),
        BaseLoss::Focal => focal_batch(logits, targets, k, cfg),
        BaseLoss::Tversky => tversky_batch(logits, targets, k, cfg.tversky_alpha, cfg.tversky_beta),
        BaseLoss::Dice => dice_batch(logits, targets, k),
    }
}

/// Per-sample base values and unscaled row gradients (CE and focal only).
pub fn base_loss_rows(
    cfg: &LossConfig,
    logits: &[f64],
    targets: &[usize],
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match cfg.base_loss {
        BaseLoss::CrossEntropy => cross_entropy_rows(logits, targets, k),
        BaseLoss::Focal => focal_rows(logits, targets, k, cfg),
        other => Err(Error::Config(format!("{other:?} has no per-sample form"))),
    }
}
