use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, BnCache, ConvShape};
use super::{FeatureVector, Real, Tensor};
use crate::error::{Error, Result};
use crate::vectorize::TokenSequence;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub max_len: usize,
}

impl NetworkConfig {
    /// Default dimensions (embed 100, 128 channels, kernel 3, latent 64).
    pub fn new(vocab_size: usize, num_classes: usize, max_len: usize) -> Self {
        NetworkConfig {
            vocab_size,
            embed_dim: 100,
            conv_channels: 128,
            kernel_size: 3,
            latent_dim: 64,
            num_classes,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("conv_channels", self.conv_channels),
            ("kernel_size", self.kernel_size),
            ("latent_dim", self.latent_dim),
            ("num_classes", self.num_classes),
            ("max_len", self.max_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("network {name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Length of `latent ‖ logits`.
    pub fn feature_dim(&self) -> usize {
        self.latent_dim + self.num_classes
    }

    fn conv_shape(&self, batch: usize, in_ch: usize) -> ConvShape {
        ConvShape {
            batch,
            len: self.max_len,
            in_ch,
            out_ch: self.conv_channels,
            kernel: self.kernel_size,
        }
    }
}

/// Trainable tensors. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<F> {
    pub embedding: Tensor<F>,
    pub conv1_w: Tensor<F>,
    pub conv1_b: Tensor<F>,
    pub bn1_gamma: Tensor<F>,
    pub bn1_beta: Tensor<F>,
    pub conv2_w: Tensor<F>,
    pub conv2_b: Tensor<F>,
    pub bn2_gamma: Tensor<F>,
    pub bn2_beta: Tensor<F>,
    pub latent_w: Tensor<F>,
    pub latent_b: Tensor<F>,
    pub cls_w: Tensor<F>,
    pub cls_b: Tensor<F>,
    pub rec_w: Tensor<F>,
    pub rec_b: Tensor<F>,
}

impl<F: Real> Weights<F> {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let (v, e, c, k, l, n) = (
            cfg.vocab_size,
            cfg.embed_dim,
            cfg.conv_channels,
            cfg.kernel_size,
            cfg.latent_dim,
            cfg.num_classes,
        );
        Weights {
            embedding: Tensor::zeros(&[v, e]),
            conv1_w: Tensor::zeros(&[k, e, c]),
            conv1_b: Tensor::zeros(&[c]),
            bn1_gamma: Tensor::zeros(&[c]),
            bn1_beta: Tensor::zeros(&[c]),
            conv2_w: Tensor::zeros(&[k, c, c]),
            conv2_b: Tensor::zeros(&[c]),
            bn2_gamma: Tensor::zeros(&[c]),
            bn2_beta: Tensor::zeros(&[c]),
            latent_w: Tensor::zeros(&[l, c]),
            latent_b: Tensor::zeros(&[l]),
            cls_w: Tensor::zeros(&[n, l]),
            cls_b: Tensor::zeros(&[n]),
            rec_w: Tensor::zeros(&[e, l]),
            rec_b: Tensor::zeros(&[e]),
        }
    }

    pub fn named(&self) -> [(&'static str, &Tensor<F>); 15] {
        [
            ("embedding", &self.embedding),
            ("conv1.weight", &self.conv1_w),
            ("conv1.bias", &self.conv1_b),
            ("bn1.gamma", &self.bn1_gamma),
            ("bn1.beta", &self.bn1_beta),
            ("conv2.weight", &self.conv2_w),
            ("conv2.bias", &self.conv2_b),
            ("bn2.gamma", &self.bn2_gamma),
            ("bn2.beta", &self.bn2_beta),
            ("latent.weight", &self.latent_w),
            ("latent.bias", &self.latent_b),
            ("classifier.weight", &self.cls_w),
            ("classifier.bias", &self.cls_b),
            ("reconstruction.weight", &self.rec_w),
            ("reconstruction.bias", &self.rec_b),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor<F>); 15] {
        [
            ("embedding", &mut self.embedding),
            ("conv1.weight", &mut self.conv1_w),
            ("conv1.bias", &mut self.conv1_b),
            ("bn1.gamma", &mut self.bn1_gamma),
            ("bn1.beta", &mut self.bn1_beta),
            ("conv2.weight", &mut self.conv2_w),
            ("conv2.bias", &mut self.conv2_b),
            ("bn2.gamma", &mut self.bn2_gamma),
            ("bn2.beta", &mut self.bn2_beta),
            ("latent.weight", &mut self.latent_w),
            ("latent.bias", &mut self.latent_b),
            ("classifier.weight", &mut self.cls_w),
            ("classifier.bias", &mut self.cls_b),
            ("reconstruction.weight", &mut self.rec_w),
            ("reconstruction.bias", &mut self.rec_b),
        ]
    }

    pub fn cast<G: Real>(&self) -> Weights<G> {
        Weights {
            embedding: self.embedding.cast(),
            conv1_w: self.conv1_w.cast(),
            conv1_b: self.conv1_b.cast(),
            bn1_gamma: self.bn1_gamma.cast(),
            bn1_beta: self.bn1_beta.cast(),
            conv2_w: self.conv2_w.cast(),
            conv2_b: self.conv2_b.cast(),
            bn2_gamma: self.bn2_gamma.cast(),
            bn2_beta: self.bn2_beta.cast(),
            latent_w: self.latent_w.cast(),
            latent_b: self.latent_b.cast(),
            cls_w: self.cls_w.cast(),
            cls_b: self.cls_b.cast(),
            rec_w: self.rec_w.cast(),
            rec_b: self.rec_b.cast(),
        }
    }
}

/// Trainable weights plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<F> {
    pub weights: Weights<F>,
    pub bn1_running_mean: Tensor<F>,
    pub bn1_running_var: Tensor<F>,
    pub bn2_running_mean: Tensor<F>,
    pub bn2_running_var: Tensor<F>,
}

impl<F: Real> Params<F> {
    /// Every stored tensor, running statistics last.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<F>)> {
        let mut all: Vec<_> = self.weights.named().into_iter().collect();
        all.push(("bn1.running_mean", &self.bn1_running_mean));
        all.push(("bn1.running_var", &self.bn1_running_var));
        all.push(("bn2.running_mean", &self.bn2_running_mean));
        all.push(("bn2.running_var", &self.bn2_running_var));
        all
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<F>)> {
        let mut all: Vec<_> = self.weights.named_mut().into_iter().collect();
        all.push(("bn1.running_mean", &mut self.bn1_running_mean));
        all.push(("bn1.running_var", &mut self.bn1_running_var));
        all.push(("bn2.running_mean", &mut self.bn2_running_mean));
        all.push(("bn2.running_var", &mut self.bn2_running_var));
        all
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            weights: self.weights.cast(),
            bn1_running_mean: self.bn1_running_mean.cast(),
            bn1_running_var: self.bn1_running_var.cast(),
            bn2_running_mean: self.bn2_running_mean.cast(),
            bn2_running_var: self.bn2_running_var.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct Cache<F> {
    indices: Vec<usize>,
    x0: Vec<F>,
    bn1: BnCache<F>,
    a1: Vec<F>,
    bn2: BnCache<F>,
    a2: Vec<F>,
    argmax: Vec<usize>,
    pooled: Vec<F>,
}

/// Batch outputs, row-major per sample.
#[derive(Clone, Debug)]
pub struct ForwardOutput<F> {
    pub batch: usize,
    /// `[batch, latent_dim]`
    pub latent: Vec<F>,
    /// `[batch, num_classes]`
    pub logits: Vec<F>,
    /// `[batch, embed_dim]`
    pub reconstruction: Vec<F>,
    latent_dim: usize,
    num_classes: usize,
    cache: Option<Cache<F>>,
}

impl<F: Real> ForwardOutput<F> {
    pub fn latent_row(&self, i: usize) -> &[F] {
        &self.latent[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    pub fn logits_row(&self, i: usize) -> &[F] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn features(&self, i: usize) -> FeatureVector {
        let lat: Vec<f64> = self.latent_row(i).iter().map(|x| x.f64()).collect();
        let log: Vec<f64> = self.logits_row(i).iter().map(|x| x.f64()).collect();
        FeatureVector::new(&lat, &log)
    }

    /// Arg-max class of each row, lowest index on ties.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|i| {
                let row = self.logits_row(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Upstream gradients of a scalar loss with respect to the network outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads<F> {
    pub latent: Vec<F>,
    pub logits: Vec<F>,
    pub reconstruction: Vec<F>,
}

impl<F: Real> OutputGrads<F> {
    pub fn zeros(batch: usize, cfg: &NetworkConfig) -> Self {
        OutputGrads {
            latent: vec![F::zero(); batch * cfg.latent_dim],
            logits: vec![F::zero(); batch * cfg.num_classes],
            reconstruction: vec![F::zero(); batch * cfg.embed_dim],
        }
    }
}

/// Batch statistics seen by each batch-norm layer during a train-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnBatchStats<F> {
    pub mean: [Vec<F>; 2],
    /// Unbiased variance, as folded into the running estimate.
    pub var: [Vec<F>; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub weights: Weights<F>,
    pub bn_stats: BnBatchStats<F>,
}

/// Configuration plus parameters of one dual-decoder model.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F> {
    pub config: NetworkConfig,
    pub params: Params<F>,
}

fn uniform<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| F::of((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    Tensor::from_vec(shape, data)
}

impl<F: Real> Network<F> {
    /// Seeded initialization: embeddings `U(-0.05, 0.05)`, conv/linear weights
    /// `U(±1/sqrt(fan_in))`, zero biases, batch-norm scale 1 and shift 0.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, e, c, k, l, n) = (
            config.vocab_size,
            config.embed_dim,
            config.conv_channels,
            config.kernel_size,
            config.latent_dim,
            config.num_classes,
        );
        let he = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let weights = Weights {
            embedding: uniform(&mut rng, &[v, e], 0.05),
            conv1_w: uniform(&mut rng, &[k, e, c], he(k * e)),
            conv1_b: Tensor::zeros(&[c]),
            bn1_gamma: Tensor::filled(&[c], F::one()),
            bn1_beta: Tensor::zeros(&[c]),
            conv2_w: uniform(&mut rng, &[k, c, c], he(k * c)),
            conv2_b: Tensor::zeros(&[c]),
            bn2_gamma: Tensor::filled(&[c], F::one()),
            bn2_beta: Tensor::zeros(&[c]),
            latent_w: uniform(&mut rng, &[l, c], he(c)),
            latent_b: Tensor::zeros(&[l]),
            cls_w: uniform(&mut rng, &[n, l], he(l)),
            cls_b: Tensor::zeros(&[n]),
            rec_w: uniform(&mut rng, &[e, l], he(l)),
            rec_b: Tensor::zeros(&[e]),
        };
        Ok(Network {
            params: Params {
                weights,
                bn1_running_mean: Tensor::zeros(&[c]),
                bn1_running_var: Tensor::filled(&[c], F::one()),
                bn2_running_mean: Tensor::zeros(&[c]),
                bn2_running_var: Tensor::filled(&[c], F::one()),
            },
            config,
        })
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn flat_indices(&self, seqs: &[TokenSequence]) -> Result<Vec<usize>> {
        let cfg = &self.config;
        let mut indices = Vec::with_capacity(seqs.len() * cfg.max_len);
        for s in seqs {
            if s.indices.len() != cfg.max_len {
                return Err(Error::Config(format!(
                    "sequence {} has length {}, network expects {}",
                    s.id,
                    s.indices.len(),
                    cfg.max_len
                )));
            }
            if let Some(&bad) = s.indices.iter().find(|&&i| i >= cfg.vocab_size) {
                return Err(Error::Config(format!(
                    "sequence {} holds index {bad} outside vocabulary of {}",
                    s.id, cfg.vocab_size
                )));
            }
            indices.extend_from_slice(&s.indices);
        }
        Ok(indices)
    }

    /// Runs a batch. `Mode::Train` normalizes with batch statistics and keeps
    /// the activations needed by [`Network::backward`].
    pub fn forward(&self, seqs: &[TokenSequence], mode: Mode) -> Result<ForwardOutput<F>> {
        let cfg = &self.config;
        let w = &self.params.weights;
        let p = &self.params;
        let b = seqs.len();
        let (e, c, l, n, len) = (
            cfg.embed_dim,
            cfg.conv_channels,
            cfg.latent_dim,
            cfg.num_classes,
            cfg.max_len,
        );
        let indices = self.flat_indices(seqs)?;

        let x0 = layers::embedding_forward(&indices, &w.embedding.data, e);
        let y1 = layers::conv1d_forward(&x0, &w.conv1_w.data, &w.conv1_b.data, cfg.conv_shape(b, e));
        let (n1, bn1) = match mode {
            Mode::Train => {
                let (y, cache) =
                    layers::batchnorm_train_forward(&y1, &w.bn1_gamma.data, &w.bn1_beta.data, c);
                (y, Some(cache))
            }
            Mode::Eval => (
                layers::batchnorm_eval_forward(
                    &y1,
                    &w.bn1_gamma.data,
                    &w.bn1_beta.data,
                    &p.bn1_running_mean.data,
                    &p.bn1_running_var.data,
                    c,
                ),
                None,
            ),
        };
        drop(y1);
        let a1 = layers::relu_forward(&n1);
        drop(n1);
        let y2 = layers::conv1d_forward(&a1, &w.conv2_w.data, &w.conv2_b.data, cfg.conv_shape(b, c));
        let (n2, bn2) = match mode {
            Mode::Train => {
                let (y, cache) =
                    layers::batchnorm_train_forward(&y2, &w.bn2_gamma.data, &w.bn2_beta.data, c);
                (y, Some(cache))
            }
            Mode::Eval => (
                layers::batchnorm_eval_forward(
                    &y2,
                    &w.bn2_gamma.data,
                    &w.bn2_beta.data,
                    &p.bn2_running_mean.data,
                    &p.bn2_running_var.data,
                    c,
                ),
                None,
            ),
        };
        drop(y2);
        let a2 = layers::relu_forward(&n2);
        drop(n2);
        let (pooled, argmax) = layers::maxpool_time_forward(&a2, b, len, c);
        let latent = layers::linear_forward(&pooled, &w.latent_w.data, &w.latent_b.data, b, c, l);
        let logits = layers::linear_forward(&latent, &w.cls_w.data, &w.cls_b.data, b, l, n);
        let reconstruction = layers::linear_forward(&latent, &w.rec_w.data, &w.rec_b.data, b, l, e);

        let cache = match (bn1, bn2) {
            (Some(bn1), Some(bn2)) => Some(Cache {
                indices,
                x0,
                bn1,
                a1,
                bn2,
                a2,
                argmax,
                pooled,
            }),
            _ => None,
        };
        Ok(ForwardOutput {
            batch: b,
            latent,
            logits,
            reconstruction,
            latent_dim: l,
            num_classes: n,
            cache,
        })
    }

    /// Mean embedding of the unpadded prefix of each sequence (zero when empty),
    /// `[batch, embed_dim]`. Used as a constant regression target.
    pub fn reconstruction_target(&self, seqs: &[TokenSequence]) -> Vec<F> {
        let e = self.config.embed_dim;
        let table = &self.params.weights.embedding.data;
        let mut out = vec![F::zero(); seqs.len() * e];
        for (r, s) in seqs.iter().enumerate() {
            if s.length == 0 {
                continue;
            }
            let row = &mut out[r * e..(r + 1) * e];
            for &i in &s.indices[..s.length] {
                for (o, &v) in row.iter_mut().zip(&table[i * e..(i + 1) * e]) {
                    *o += v;
                }
            }
            let inv = F::one() / F::of(s.length as f64);
            for o in row.iter_mut() {
                *o *= inv;
            }
        }
        out
    }

    /// Gradients of a scalar loss whose output gradients are `upstream`.
    /// With `detach_reconstruction` the reconstruction head still gets its own
    /// gradients but sends nothing back into the latent vector.
    pub fn backward(
        &self,
        out: &ForwardOutput<F>,
        upstream: &OutputGrads<F>,
        detach_reconstruction: bool,
    ) -> Result<Gradients<F>> {
        let cache = out.cache.as_ref().ok_or_else(|| {
            Error::State("backward needs a train-mode forward pass with cached activations".into())
        })?;
        let cfg = &self.config;
        let w = &self.params.weights;
        let b = out.batch;
        let (e, c, l, n, len) = (
            cfg.embed_dim,
            cfg.conv_channels,
            cfg.latent_dim,
            cfg.num_classes,
            cfg.max_len,
        );
        if upstream.latent.len() != b * l
            || upstream.logits.len() != b * n
            || upstream.reconstruction.len() != b * e
        {
            return Err(Error::Shape("upstream gradient shapes do not match the batch".into()));
        }

        let mut g = Weights::zeros(cfg);
        let mut d_latent = upstream.latent.clone();

        let (dl_cls, dw, db) = layers::linear_backward(&out.latent, &w.cls_w.data, &upstream.logits, b, l, n);
        g.cls_w.data = dw;
        g.cls_b.data = db;
        for (d, x) in d_latent.iter_mut().zip(&dl_cls) {
            *d += *x;
        }

        let (dl_rec, dw, db) =
            layers::linear_backward(&out.latent, &w.rec_w.data, &upstream.reconstruction, b, l, e);
        g.rec_w.data = dw;
        g.rec_b.data = db;
        if !detach_reconstruction {
            for (d, x) in d_latent.iter_mut().zip(&dl_rec) {
                *d += *x;
            }
        }

        let (d_pooled, dw, db) = layers::linear_backward(&cache.pooled, &w.latent_w.data, &d_latent, b, c, l);
        g.latent_w.data = dw;
        g.latent_b.data = db;

        let d_a2 = layers::maxpool_time_backward(&d_pooled, &cache.argmax, b, len, c);
        let d_n2 = layers::relu_backward(&d_a2, &cache.a2);
        let (d_y2, dg, dbeta) = layers::batchnorm_backward(&d_n2, &cache.bn2, &w.bn2_gamma.data, c);
        g.bn2_gamma.data = dg;
        g.bn2_beta.data = dbeta;
        let (d_a1, dw, db) = layers::conv1d_backward(&cache.a1, &w.conv2_w.data, &d_y2, cfg.conv_shape(b, c));
        g.conv2_w.data = dw;
        g.conv2_b.data = db;

        let d_n1 = layers::relu_backward(&d_a1, &cache.a1);
        let (d_y1, dg, dbeta) = layers::batchnorm_backward(&d_n1, &cache.bn1, &w.bn1_gamma.data, c);
        g.bn1_gamma.data = dg;
        g.bn1_beta.data = dbeta;
        let (d_x0, dw, db) = layers::conv1d_backward(&cache.x0, &w.conv1_w.data, &d_y1, cfg.conv_shape(b, e));
        g.conv1_w.data = dw;
        g.conv1_b.data = db;

        g.embedding.data = layers::embedding_backward(&cache.indices, &d_x0, cfg.vocab_size, e);

        let unbias = |bn: &BnCache<F>| -> Vec<F> {
            let m = bn.rows as f64;
            let factor = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            bn.var.iter().map(|&v| F::of(v.f64() * factor)).collect()
        };
        Ok(Gradients {
            weights: g,
            bn_stats: BnBatchStats {
                mean: [cache.bn1.mean.clone(), cache.bn2.mean.clone()],
                var: [unbias(&cache.bn1), unbias(&cache.bn2)],
            },
        })
    }
}
