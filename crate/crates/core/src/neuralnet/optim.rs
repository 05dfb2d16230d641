use super::{Gradients, Params, Real, Tensor, Weights};
use crate::error::{Error, Result};

/// Momentum used to fold batch statistics into the running estimates.
pub const BN_MOMENTUM: f64 = 0.1;

/// Mini-batch SGD with optional momentum, L2 weight decay and global
/// gradient-norm clipping (all off by default).
#[derive(Clone, Debug)]
pub struct Sgd<F> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescale the whole gradient to this L2 norm when it is larger; 0 disables.
    pub clip_norm: f64,
    velocity: Option<Weights<F>>,
}

impl<F: Real> Sgd<F> {
    pub fn new(lr: f64) -> Self {
        Sgd {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            clip_norm: 0.0,
            velocity: None,
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_clip_norm(mut self, clip_norm: f64) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    /// `p <- p - lr * g` for every trainable tensor, then the running
    /// statistics update. Non-finite gradients abort before anything changes.
    pub fn step(&mut self, params: &mut Params<F>, grads: &Gradients<F>) -> Result<()> {
        for (name, g) in grads.weights.named() {
            if !g.all_finite() {
                return Err(Error::Divergence(format!("gradient of {name}")));
            }
        }
        let mut scale = 1.0;
        if self.clip_norm > 0.0 {
            let norm = grads.weights.named().iter().map(|(_, g)| g.norm_sq()).sum::<f64>().sqrt();
            if norm > self.clip_norm {
                scale = self.clip_norm / norm;
            }
        }
        let scale = F::of(scale);
        let lr = F::of(self.lr);
        let wd = F::of(self.weight_decay);
        let mu = F::of(self.momentum);
        let use_velocity = self.momentum != 0.0;
        if use_velocity && self.velocity.is_none() {
            let mut v = grads.weights.clone();
            for (_, t) in v.named_mut() {
                t.data.iter_mut().for_each(|x| *x = F::zero());
            }
            self.velocity = Some(v);
        }
        let mut velocity = self.velocity.as_mut().map(|v| v.named_mut().into_iter());
        for ((name, p), (_, g)) in params.weights.named_mut().into_iter().zip(grads.weights.named()) {
            let v = velocity.as_mut().and_then(|it| it.next()).map(|(_, v)| v);
            update(p, g, v, lr, wd, mu, scale);
            if !p.all_finite() {
                return Err(Error::Divergence(format!("parameter {name}")));
            }
        }

        let m = F::of(BN_MOMENTUM);
        let keep = F::one() - m;
        let running = [
            (&mut params.bn1_running_mean, &grads.bn_stats.mean[0]),
            (&mut params.bn1_running_var, &grads.bn_stats.var[0]),
            (&mut params.bn2_running_mean, &grads.bn_stats.mean[1]),
            (&mut params.bn2_running_var, &grads.bn_stats.var[1]),
        ];
        for (r, batch) in running {
            for (x, &b) in r.data.iter_mut().zip(batch) {
                *x = keep * *x + m * b;
            }
        }
        Ok(())
    }
}

fn update<F: Real>(p: &mut Tensor<F>, g: &Tensor<F>, v: Option<&mut Tensor<F>>, lr: F, wd: F, mu: F, scale: F) {
    match v {
        None => {
            for (x, &d) in p.data.iter_mut().zip(&g.data) {
                let d = if wd != F::zero() { scale * d + wd * *x } else { scale * d };
                *x -= lr * d;
            }
        }
        Some(v) => {
            for ((x, &d), vel) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                let d = if wd != F::zero() { scale * d + wd * *x } else { scale * d };
                *vel = mu * *vel + d;
                *x -= lr * *vel;
            }
        }
    }
}

/// Plain SGD step without momentum or decay.
pub fn sgd_step<F: Real>(params: &mut Params<F>, grads: &Gradients<F>, lr: f64) -> Result<()> {
    Sgd::new(lr).step(params, grads)
}
