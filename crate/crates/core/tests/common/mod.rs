//! Shared fixtures and finite-difference oracles for the integration tests.
#![allow(dead_code)]

use latentg::distill::{self, DistMode, DistillConfig, PMode, SignalContext, TeacherFeatureStore};
use latentg::gmm::{FitConfig, GmmModel};
use latentg::losses::{self, BaseLoss, Composition, LossConfig, TrainSchedule};
use latentg::neuralnet::layers::{self, ConvShape};
use latentg::neuralnet::{Mode, Network, NetworkConfig, Weights};
use latentg::trainer::{objective, Objective};
use latentg::vectorize::TokenSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const H: f64 = 1e-5;

/// Gradient magnitudes below `ZERO_FLOOR * max(1, |loss|)` are compared on
/// that absolute scale. Central differences at `H` carry about
/// `1e-10 * |loss|` of rounding noise, so exact zeros (biases feeding
/// batch-norm) need a floor that grows with the loss.
pub const ZERO_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_at(analytic, numeric, 1.0)
}

pub fn rel_err_at(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = ZERO_FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_rel_at(analytic, numeric, 1.0)
}

/// Worst [`rel_err_at`] over matching components; NaN propagates.
pub fn max_rel_at(analytic: &[f64], numeric: &[f64], loss: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err_at(a, n, loss))
        .fold(0.0, |m: f64, e| if e.is_nan() || m.is_nan() { f64::NAN } else { m.max(e) })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error per checked quantity.
#[derive(Debug, Default)]
pub struct Report {
    pub entries: Vec<(String, f64)>,
}

impl Report {
    pub fn push(&mut self, name: impl Into<String>, err: f64) {
        self.entries.push((name.into(), err));
    }

    pub fn worst(&self) -> (String, f64) {
        self.entries
            .iter()
            .cloned()
            .fold((String::new(), 0.0), |a, b| if b.1 > a.1 || b.1.is_nan() { b } else { a })
    }
}

// ---- layers ----------------------------------------------------------------

/// Every layer, each checked through the scalar `sum(r * output)` for a random `r`.
pub fn check_layers(seed: u64, report: &mut Report) {
    let mut g = rng(seed);

    // embedding
    let (v, e) = (7, 3);
    let table = normal(&mut g, v * e);
    let idx: Vec<usize> = (0..9).map(|_| g.random_range(0..v)).collect();
    let r = normal(&mut g, idx.len() * e);
    let analytic = layers::embedding_backward(&idx, &r, v, e);
    let numeric = numeric_grad(&table, |t| dot(&layers::embedding_forward(&idx, t, e), &r));
    report.push("layer embedding", max_rel(&analytic, &numeric));

    // linear
    let (b, i, o) = (4, 5, 3);
    let x = normal(&mut g, b * i);
    let w = normal(&mut g, o * i);
    let bias = normal(&mut g, o);
    let r = normal(&mut g, b * o);
    let (dx, dw, db) = layers::linear_backward(&x, &w, &r, b, i, o);
    let f = |x: &[f64], w: &[f64], bias: &[f64]| dot(&layers::linear_forward(x, w, bias, b, i, o), &r);
    report.push("layer linear input", max_rel(&dx, &numeric_grad(&x, |p| f(p, &w, &bias))));
    report.push("layer linear weight", max_rel(&dw, &numeric_grad(&w, |p| f(&x, p, &bias))));
    report.push("layer linear bias", max_rel(&db, &numeric_grad(&bias, |p| f(&x, &w, p))));

    // conv1d, odd and even kernels
    for kernel in [3, 2] {
        let s = ConvShape {
            batch: 2,
            len: 5,
            in_ch: 3,
            out_ch: 4,
            kernel,
        };
        let x = normal(&mut g, s.batch * s.len * s.in_ch);
        let w = normal(&mut g, s.kernel * s.in_ch * s.out_ch);
        let bias = normal(&mut g, s.out_ch);
        let r = normal(&mut g, s.batch * s.len * s.out_ch);
        let (dx, dw, db) = layers::conv1d_backward(&x, &w, &r, s);
        let f = |x: &[f64], w: &[f64], bias: &[f64]| dot(&layers::conv1d_forward(x, w, bias, s), &r);
        report.push(format!("layer conv{kernel} input"), max_rel(&dx, &numeric_grad(&x, |p| f(p, &w, &bias))));
        report.push(format!("layer conv{kernel} weight"), max_rel(&dw, &numeric_grad(&w, |p| f(&x, p, &bias))));
        report.push(format!("layer conv{kernel} bias"), max_rel(&db, &numeric_grad(&bias, |p| f(&x, &w, p))));
    }

    // batch-norm, train mode
    let ch = 3;
    let x = normal(&mut g, 8 * ch);
    let gamma: Vec<f64> = normal(&mut g, ch).iter().map(|v| 1.0 + 0.3 * v).collect();
    let beta = normal(&mut g, ch);
    let r = normal(&mut g, x.len());
    let (_, cache) = layers::batchnorm_train_forward(&x, &gamma, &beta, ch);
    let (dx, dgamma, dbeta) = layers::batchnorm_backward(&r, &cache, &gamma, ch);
    let f = |x: &[f64], gm: &[f64], bt: &[f64]| dot(&layers::batchnorm_train_forward(x, gm, bt, ch).0, &r);
    report.push("layer batchnorm input", max_rel(&dx, &numeric_grad(&x, |p| f(p, &gamma, &beta))));
    report.push("layer batchnorm scale", max_rel(&dgamma, &numeric_grad(&gamma, |p| f(&x, p, &beta))));
    report.push("layer batchnorm shift", max_rel(&dbeta, &numeric_grad(&beta, |p| f(&x, &gamma, p))));

    // relu, away from the kink
    let x: Vec<f64> = normal(&mut g, 12).into_iter().map(|v| if v.abs() < 1e-3 { 0.5 } else { v }).collect();
    let r = normal(&mut g, x.len());
    let y = layers::relu_forward(&x);
    let dx = layers::relu_backward(&r, &y);
    report.push("layer relu", max_rel(&dx, &numeric_grad(&x, |p| dot(&layers::relu_forward(p), &r))));

    // max-pool over time
    let (b, len, ch) = (2, 4, 3);
    let x = normal(&mut g, b * len * ch);
    let r = normal(&mut g, b * ch);
    let (_, arg) = layers::maxpool_time_forward(&x, b, len, ch);
    let dx = layers::maxpool_time_backward(&r, &arg, b, len, ch);
    let numeric = numeric_grad(&x, |p| dot(&layers::maxpool_time_forward(p, b, len, ch).0, &r));
    report.push("layer maxpool", max_rel(&dx, &numeric));
}

// ---- losses ----------------------------------------------------------------

pub fn random_logits(g: &mut ChaCha8Rng, b: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let logits = normal(g, b * k).into_iter().map(|v| 1.5 * v).collect();
    let targets = (0..b).map(|_| g.random_range(0..k)).collect();
    (logits, targets)
}

fn probs_rows(logits: &[f64], k: usize) -> Vec<f64> {
    logits.chunks(k).flat_map(losses::softmax).collect()
}

/// Batch loss gradients against finite differences of the scalar definitions.
pub fn check_losses(seed: u64, report: &mut Report) {
    let mut g = rng(seed);
    let (b, k) = (6, 4);
    let (logits, t) = random_logits(&mut g, b, k);
    let mean = |v: f64| v / b as f64;

    let ce = losses::cross_entropy_batch(&logits, &t, k).unwrap();
    let numeric = numeric_grad(&logits, |z| {
        mean(z.chunks(k).zip(&t).map(|(row, &y)| losses::cross_entropy(row, y).unwrap()).sum())
    });
    report.push("loss cross-entropy", max_rel(&ce.grad, &numeric));

    let cfg = LossConfig {
        base_loss: BaseLoss::Focal,
        focal_alpha_t: (0..k).map(|_| g.random_range(0.2..1.0)).collect(),
        focal_gamma: g.random_range(0.5..3.0),
        ..LossConfig::default()
    };
    let focal = losses::focal_batch(&logits, &t, k, &cfg).unwrap();
    let numeric = numeric_grad(&logits, |z| {
        mean(
            z.chunks(k)
                .zip(&t)
                .map(|(row, &y)| losses::focal_loss(&losses::softmax(row), y, cfg.focal_alpha_t[y], cfg.focal_gamma))
                .sum(),
        )
    });
    report.push("loss focal", max_rel(&focal.grad, &numeric));

    let (ta, tb) = (g.random_range(0.1..0.9), g.random_range(0.1..0.9));
    let tv = losses::tversky_batch(&logits, &t, k, ta, tb).unwrap();
    let numeric = numeric_grad(&logits, |z| {
        losses::tversky_loss(&losses::soft_confusion(&probs_rows(z, k), &t, k), ta, tb)
    });
    report.push("loss tversky", max_rel(&tv.grad, &numeric));

    let dice = losses::dice_batch(&logits, &t, k).unwrap();
    let numeric = numeric_grad(&logits, |z| losses::dice_loss(&losses::soft_confusion(&probs_rows(z, k), &t, k)));
    report.push("loss dice", max_rel(&dice.grad, &numeric));

    let pred = normal(&mut g, 10);
    let target = normal(&mut g, 10);
    let m = losses::mse_batch(&pred, &target).unwrap();
    report.push("loss mse", max_rel(&m.grad, &numeric_grad(&pred, |p| losses::mse(p, &target).unwrap())));
}

// ---- signals ---------------------------------------------------------------

pub struct SignalFixture {
    pub store: TeacherFeatureStore,
    pub gmm: GmmModel,
    pub latent_dim: usize,
    pub num_classes: usize,
}

/// Teacher features for ids `0..n` drawn around one centre per class, with a
/// mixture fitted and mapped on them.
pub fn signal_fixture(seed: u64, n: usize, latent_dim: usize, num_classes: usize, scale: f64) -> (SignalFixture, Vec<usize>) {
    let mut g = rng(seed ^ 0x5eed);
    let dim = latent_dim + num_classes;
    let centres: Vec<f64> = normal(&mut g, num_classes * dim).into_iter().map(|v| 2.0 * scale * v).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut values = Vec::with_capacity(n * dim);
    for &y in &labels {
        for d in 0..dim {
            values.push(centres[y * dim + d] + scale * normal(&mut g, 1)[0]);
        }
    }
    let store = TeacherFeatureStore::new(latent_dim, dim, "fixture".into(), (0..n as u64).collect(), values).unwrap();
    let cfg = DistillConfig {
        fit: FitConfig {
            seed,
            ..FitConfig::default()
        },
        ..DistillConfig::default()
    };
    let gmm = distill::fit_mixture(&store, &labels, num_classes, &cfg).unwrap();
    (
        SignalFixture {
            store,
            gmm,
            latent_dim,
            num_classes,
        },
        labels,
    )
}

pub fn distill_variants() -> Vec<DistillConfig> {
    let mut out = Vec::new();
    for p_mode in [PMode::TrueClassPosterior, PMode::MostLikelyPosterior, PMode::ClampedPdf] {
        for (dist_mode, dist_normalize) in [(DistMode::Feature, false), (DistMode::Logits, true)] {
            out.push(DistillConfig {
                p_mode,
                dist_mode,
                dist_normalize,
                ..DistillConfig::default()
            });
        }
    }
    out
}

/// `d p / d f` and `d dist / d f` against finite differences of the signal itself.
pub fn check_signals(seed: u64, report: &mut Report) {
    let (fx, labels) = signal_fixture(seed, 24, 3, 3, 1.0);
    let mut g = rng(seed);
    for cfg in distill_variants() {
        let ctx = SignalContext {
            store: &fx.store,
            gmm: &fx.gmm,
            config: &cfg,
        };
        let mut err_p: f64 = 0.0;
        let mut err_d: f64 = 0.0;
        for id in 0..6u64 {
            let teacher = fx.store.get(id).unwrap().to_vec();
            let f: Vec<f64> = teacher.iter().zip(normal(&mut g, teacher.len())).map(|(t, n)| t + 0.7 * n).collect();
            let y = labels[id as usize];
            let sg = ctx.signal_with_grad(&f, id, y).unwrap();
            let np = numeric_grad(&f, |x| ctx.signal(x, id, y).unwrap().p);
            let nd = numeric_grad(&f, |x| ctx.signal(x, id, y).unwrap().dist);
            err_p = err_p.max(max_rel(&sg.d_p, &np));
            err_d = err_d.max(max_rel(&sg.d_dist, &nd));
        }
        let tag = format!("{:?}/{:?}", cfg.p_mode, cfg.dist_mode);
        report.push(format!("signal p {tag}"), err_p);
        report.push(format!("signal dist {tag}"), err_d);
    }
}

// ---- whole network ---------------------------------------------------------

pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        vocab_size: 10,
        embed_dim: 4,
        conv_channels: 5,
        kernel_size: 3,
        latent_dim: 3,
        num_classes: 3,
        max_len: 6,
    }
}

pub fn random_batch(g: &mut ChaCha8Rng, b: usize, cfg: &NetworkConfig) -> Vec<TokenSequence> {
    (0..b)
        .map(|i| {
            let length = g.random_range(1..=cfg.max_len);
            let mut indices: Vec<usize> = (0..length).map(|_| g.random_range(1..cfg.vocab_size)).collect();
            indices.resize(cfg.max_len, latentg::vectorize::PAD);
            TokenSequence {
                id: i as u64,
                indices,
                length,
            }
        })
        .collect()
}

fn flatten(w: &Weights<f64>) -> Vec<f64> {
    w.named().iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
}

fn unflatten(w: &mut Weights<f64>, flat: &[f64]) {
    let mut at = 0;
    for (_, t) in w.named_mut() {
        let n = t.data.len();
        t.data.copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

/// Total loss recomposed from scalar definitions, with the reconstruction
/// target held at `target`.
fn oracle_total(
    net: &Network<f64>,
    seqs: &[TokenSequence],
    labels: &[usize],
    target: &[f64],
    loss: &LossConfig,
    ctx: Option<&SignalContext>,
    schedule: &TrainSchedule,
) -> f64 {
    let out = net.forward(seqs, Mode::Train).unwrap();
    let k = net.config.num_classes;
    let b = seqs.len();
    let lg: Vec<f64> = match ctx {
        Some(ctx) if loss.alpha != 0.0 || loss.beta != 0.0 => (0..b)
            .map(|i| {
                let s = ctx.signal(&out.features(i).values, seqs[i].id, labels[i]).unwrap();
                losses::latentg_term(s.p, s.dist, loss.alpha, loss.beta).unwrap()
            })
            .collect(),
        _ => vec![0.0; b],
    };
    let mse = losses::mse(&out.reconstruction, target).unwrap();
    let rows: Vec<f64> = out
        .logits
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| match loss.base_loss {
            BaseLoss::CrossEntropy => losses::cross_entropy(row, y).unwrap(),
            BaseLoss::Focal => losses::focal_loss(&losses::softmax(row), y, loss.focal_weight(y), loss.focal_gamma),
            _ => f64::NAN,
        })
        .collect();
    let base = match loss.base_loss {
        BaseLoss::Tversky => losses::tversky_loss(
            &losses::soft_confusion(&probs_rows(&out.logits, k), labels, k),
            loss.tversky_alpha,
            loss.tversky_beta,
        ),
        BaseLoss::Dice => losses::dice_loss(&losses::soft_confusion(&probs_rows(&out.logits, k), labels, k)),
        _ => rows.iter().sum::<f64>() / b as f64,
    };
    let lg_mean = lg.iter().sum::<f64>() / b as f64;
    match loss.composition {
        Composition::BatchMean => losses::total_loss(base, lg_mean, mse, schedule, loss.gamma),
        Composition::PerSample => {
            let s = schedule.factor();
            rows.iter().zip(&lg).map(|(v, l)| v * (1.0 + s * l)).sum::<f64>() / b as f64 + loss.gamma * mse
        }
    }
}

pub struct NetCase {
    pub name: String,
    pub loss: LossConfig,
    pub signals: bool,
    pub distill: DistillConfig,
}

pub fn network_cases() -> Vec<NetCase> {
    let mut cases = Vec::new();
    for base in [BaseLoss::CrossEntropy, BaseLoss::Focal, BaseLoss::Tversky, BaseLoss::Dice] {
        for signals in [false, true] {
            cases.push(NetCase {
                name: format!("net {base:?} {}", if signals { "student" } else { "teacher" }),
                loss: LossConfig {
                    base_loss: base,
                    focal_alpha_t: vec![0.25, 0.5, 1.0],
                    ..LossConfig::default()
                },
                signals,
                distill: DistillConfig::default(),
            });
        }
    }
    for base in [BaseLoss::CrossEntropy, BaseLoss::Focal] {
        cases.push(NetCase {
            name: format!("net {base:?} student per-sample"),
            loss: LossConfig {
                base_loss: base,
                composition: Composition::PerSample,
                ..LossConfig::default()
            },
            signals: true,
            distill: DistillConfig::default(),
        });
    }
    for (i, d) in distill_variants().into_iter().enumerate().skip(1) {
        cases.push(NetCase {
            name: format!("net CE student {:?}/{:?} #{i}", d.p_mode, d.dist_mode),
            loss: LossConfig::default(),
            signals: true,
            distill: d,
        });
    }
    cases
}

/// Analytic parameter gradients of the full objective (through `objective`
/// and `backward`) against finite differences of [`oracle_total`].
pub fn check_network(seed: u64, case: &NetCase, report: &mut Report) {
    let cfg = tiny_config();
    let mut g = rng(seed);
    let mut net = Network::<f64>::init(cfg.clone(), seed).unwrap();
    // Move batch-norm and biases off their trivial initial values.
    let mut flat = flatten(&net.params.weights);
    let noise = normal(&mut g, flat.len());
    flat.iter_mut().zip(noise).for_each(|(w, n)| *w += 0.1 * n);
    unflatten(&mut net.params.weights, &flat);
    let b = 5;
    let seqs = random_batch(&mut g, b, &cfg);
    let labels: Vec<usize> = (0..b).map(|i| i % cfg.num_classes).collect();
    let schedule = TrainSchedule::new(3, 5).unwrap();

    // Teacher vectors near the student's own features so signals are informative.
    let fx = case.signals.then(|| {
        let out = net.forward(&seqs, Mode::Eval).unwrap();
        let (mut fx, mut fit_labels) = signal_fixture(seed, 30, cfg.latent_dim, cfg.num_classes, 1.0);
        let dim = cfg.feature_dim();
        let mut values = fx.store.matrix().to_vec();
        for i in 0..b {
            let f = out.features(i).values;
            let noise = normal(&mut g, dim);
            values[i * dim..(i + 1) * dim]
                .iter_mut()
                .zip(f.iter().zip(noise))
                .for_each(|(v, (x, n))| *v = x + 0.5 * n);
            fit_labels[i] = labels[i];
        }
        let ids = fx.store.ids().to_vec();
        fx.store = TeacherFeatureStore::new(cfg.latent_dim, dim, "fixture".into(), ids, values).unwrap();
        let dcfg = DistillConfig {
            fit: FitConfig {
                seed,
                ..FitConfig::default()
            },
            ..case.distill.clone()
        };
        fx.gmm = distill::fit_mixture(&fx.store, &fit_labels, cfg.num_classes, &dcfg).unwrap();
        fx
    });
    let ctx = fx.as_ref().map(|fx| SignalContext {
        store: &fx.store,
        gmm: &fx.gmm,
        config: &case.distill,
    });

    let obj = Objective {
        loss: &case.loss,
        signals: ctx,
        schedule,
    };
    let out = net.forward(&seqs, Mode::Train).unwrap();
    let (terms, upstream) = objective(&net, &out, &seqs, &labels, &obj).unwrap();
    let grads = net.backward(&out, &upstream, false).unwrap();
    let target = net.reconstruction_target(&seqs);

    let oracle = |n: &Network<f64>| oracle_total(n, &seqs, &labels, &target, &case.loss, ctx.as_ref(), &schedule);
    let value = oracle(&net);
    report.push(format!("{} value", case.name), rel_err(terms.total, value));

    let analytic = flatten(&grads.weights);
    let base = flatten(&net.params.weights);
    let mut probe = net.clone();
    let numeric = numeric_grad(&base, |w| {
        unflatten(&mut probe.params.weights, w);
        oracle(&probe)
    });
    let mut at = 0;
    for (name, t) in grads.weights.named() {
        let n = t.data.len();
        report.push(
            format!("{} {name}", case.name),
            max_rel_at(&analytic[at..at + n], &numeric[at..at + n], value),
        );
        at += n;
    }
}

/// Every layer, loss, signal and network case for one seed.
pub fn gradient_suite(seed: u64) -> Report {
    let mut report = Report::default();
    check_layers(seed, &mut report);
    check_losses(seed, &mut report);
    check_signals(seed, &mut report);
    for case in network_cases() {
        check_network(seed, &case, &mut report);
    }
    report
}
