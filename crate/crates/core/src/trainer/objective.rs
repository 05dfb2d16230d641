use crate::distill::SignalContext;
use crate::error::{Error, Result};
use crate::losses::{self, Composition, LossConfig, TrainSchedule};
use crate::neuralnet::{ForwardOutput, Network, OutputGrads, Real};
use crate::vectorize::TokenSequence;

/// What one batch is optimized against. Without `signals` this is the
/// teacher objective `base + gamma * mse`.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub loss: &'a LossConfig,
    pub signals: Option<SignalContext<'a>>,
    pub schedule: TrainSchedule,
}

/// Batch-mean loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchTerms {
    pub base: f64,
    pub latentg_mean: f64,
    pub mse: f64,
    pub total: f64,
    pub modulation: f64,
}

impl Objective<'_> {
    fn uses_signals(&self) -> bool {
        self.signals.is_some() && (self.loss.alpha != 0.0 || self.loss.beta != 0.0)
    }
}

/// Loss value and gradients with respect to the three network outputs.
///
/// The reconstruction target and the teacher-side quantities are constants.
/// The student feature vector carries gradient through `p` and `dist` unless
/// the distillation config stops it.
pub fn objective<F: Real>(
    net: &Network<F>,
    out: &ForwardOutput<F>,
    seqs: &[TokenSequence],
    labels: &[usize],
    obj: &Objective,
) -> Result<(BatchTerms, OutputGrads<F>)> {
    let cfg = &net.config;
    let b = out.batch;
    if seqs.len() != b || labels.len() != b {
        return Err(Error::Shape(format!(
            "batch of {b} outputs with {} sequences and {} labels",
            seqs.len(),
            labels.len()
        )));
    }
    let (l, k) = (cfg.latent_dim, cfg.num_classes);
    let loss = obj.loss;
    let logits: Vec<f64> = out.logits.iter().map(|x| x.f64()).collect();
    let recon: Vec<f64> = out.reconstruction.iter().map(|x| x.f64()).collect();
    let target: Vec<f64> = net.reconstruction_target(seqs).iter().map(|x| x.f64()).collect();

    let mse = losses::mse_batch(&recon, &target)?;
    let s = obj.schedule.factor();

    // Per-sample latent term and its gradient w.r.t. the feature vector.
    let mut lg = vec![0.0; b];
    let mut d_lg: Vec<Vec<f64>> = Vec::new();
    if obj.uses_signals() {
        let ctx = obj.signals.expect("checked");
        let want_grad = !ctx.config.stop_gradient_signals;
        for i in 0..b {
            let f = out.features(i).values;
            let sg = ctx.signal_with_grad(&f, seqs[i].id, labels[i])?;
            lg[i] = losses::latentg_term(sg.signal.p, sg.signal.dist, loss.alpha, loss.beta)?;
            if want_grad {
                d_lg.push(
                    sg.d_p
                        .iter()
                        .zip(&sg.d_dist)
                        .map(|(dp, dd)| -loss.alpha * dp + loss.beta * dd)
                        .collect(),
                );
            }
        }
    }
    let lg_mean = lg.iter().sum::<f64>() / b.max(1) as f64;

    let mut d_logits = vec![0.0; b * k];
    let mut d_latent = vec![0.0; b * l];
    let (base, total, modulation);
    match loss.composition {
        Composition::BatchMean => {
            let bg = losses::base_loss_batch(loss, &logits, labels, k)?;
            base = bg.value;
            modulation = losses::modulation(lg_mean, &obj.schedule);
            total = losses::total_loss(base, lg_mean, mse.value, &obj.schedule, loss.gamma);
            for (d, g) in d_logits.iter_mut().zip(&bg.grad) {
                *d = modulation * g;
            }
            let scale = base * s / b as f64;
            add_feature_grads(&d_lg, scale, l, k, &mut d_latent, &mut d_logits);
        }
        Composition::PerSample => {
            let (values, grads) = losses::base_loss_rows(loss, &logits, labels, k)?;
            let inv_b = 1.0 / b as f64;
            base = values.iter().sum::<f64>() * inv_b;
            modulation = losses::modulation(lg_mean, &obj.schedule);
            let mut t = 0.0;
            for i in 0..b {
                let m_i = 1.0 + s * lg[i];
                t += values[i] * m_i;
                for (d, g) in d_logits[i * k..(i + 1) * k].iter_mut().zip(&grads[i * k..(i + 1) * k]) {
                    *d = inv_b * m_i * g;
                }
                if let Some(dl) = d_lg.get(i) {
                    let c = inv_b * values[i] * s;
                    for (d, g) in d_latent[i * l..(i + 1) * l].iter_mut().zip(&dl[..l]) {
                        *d += c * g;
                    }
                    for (d, g) in d_logits[i * k..(i + 1) * k].iter_mut().zip(&dl[l..]) {
                        *d += c * g;
                    }
                }
            }
            total = t * inv_b + loss.gamma * mse.value;
        }
    }

    let grads = OutputGrads {
        latent: d_latent.into_iter().map(F::of).collect(),
        logits: d_logits.into_iter().map(F::of).collect(),
        reconstruction: mse.grad.iter().map(|g| F::of(loss.gamma * g)).collect(),
    };
    Ok((
        BatchTerms {
            base,
            latentg_mean: lg_mean,
            mse: mse.value,
            total,
            modulation,
        },
        grads,
    ))
}

fn add_feature_grads(d_lg: &[Vec<f64>], scale: f64, l: usize, k: usize, d_latent: &mut [f64], d_logits: &mut [f64]) {
    for (i, g) in d_lg.iter().enumerate() {
        for (d, v) in d_latent[i * l..(i + 1) * l].iter_mut().zip(&g[..l]) {
            *d += scale * v;
        }
        for (d, v) in d_logits[i * k..(i + 1) * k].iter_mut().zip(&g[l..]) {
            *d += scale * v;
        }
    }
}
