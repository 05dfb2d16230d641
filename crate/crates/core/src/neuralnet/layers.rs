//! Forward and backward kernels for every layer type of the network.
//!
//! Sequence activations are laid out `[batch, time, channel]`, row-major.

use super::Real;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = F::zero();
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// ---------------------------------------------------------------- embedding

/// Row lookup: `indices` -> `[indices.len(), dim]`.
pub fn embedding_forward<F: Real>(indices: &[usize], table: &[F], dim: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        out.extend_from_slice(&table[i * dim..(i + 1) * dim]);
    }
    out
}

/// Scatter-adds row gradients back into a `[vocab, dim]` table gradient.
pub fn embedding_backward<F: Real>(
    indices: &[usize],
    d_out: &[F],
    vocab: usize,
    dim: usize,
) -> Vec<F> {
    let mut grad = vec![F::zero(); vocab * dim];
    for (pos, &i) in indices.iter().enumerate() {
        axpy(
            &mut grad[i * dim..(i + 1) * dim],
            F::one(),
            &d_out[pos * dim..(pos + 1) * dim],
        );
    }
    grad
}

// ---------------------------------------------------------------- linear

/// `y = x W^T + b` with `W: [out, in]`.
pub fn linear_forward<F: Real>(
    x: &[F],
    w: &[F],
    b: &[F],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> Vec<F> {
    let mut y = Vec::with_capacity(batch * out_dim);
    for r in 0..batch {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            y.push(dot(&w[o * in_dim..(o + 1) * in_dim], xr) + b[o]);
        }
    }
    y
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward<F: Real>(
    x: &[F],
    w: &[F],
    dy: &[F],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let mut dx = vec![F::zero(); batch * in_dim];
    let mut dw = vec![F::zero(); out_dim * in_dim];
    let mut db = vec![F::zero(); out_dim];
    for r in 0..batch {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let g = dy[r * out_dim + o];
            db[o] += g;
            axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g, xr);
            axpy(&mut dx[r * in_dim..(r + 1) * in_dim], g, &w[o * in_dim..(o + 1) * in_dim]);
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------- conv1d

/// Geometry of a same-padded 1-d convolution over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub len: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl ConvShape {
    fn left_pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Input position read by output position `t` at kernel tap `j`, if inside.
    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let s = (t + j).checked_sub(self.left_pad())?;
        (s < self.len).then_some(s)
    }
}

/// Zero-padded convolution. `w: [kernel, in_ch, out_ch]`, `b: [out_ch]`.
pub fn conv1d_forward<F: Real>(x: &[F], w: &[F], b: &[F], s: ConvShape) -> Vec<F> {
    let mut y = vec![F::zero(); s.batch * s.len * s.out_ch];
    for n in 0..s.batch {
        for t in 0..s.len {
            let row = (n * s.len + t) * s.out_ch;
            let yr = &mut y[row..row + s.out_ch];
            yr.copy_from_slice(b);
            for j in 0..s.kernel {
                let Some(src) = s.source(t, j) else { continue };
                let xr = &x[(n * s.len + src) * s.in_ch..][..s.in_ch];
                for (i, &xv) in xr.iter().enumerate() {
                    axpy(yr, xv, &w[(j * s.in_ch + i) * s.out_ch..][..s.out_ch]);
                }
            }
        }
    }
    y
}

/// Returns `(dx, dW, db)`.
pub fn conv1d_backward<F: Real>(
    x: &[F],
    w: &[F],
    dy: &[F],
    s: ConvShape,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    // [kernel, out_ch, in_ch] so the input gradient is an axpy over in_ch
    let mut wt = vec![F::zero(); w.len()];
    for j in 0..s.kernel {
        for i in 0..s.in_ch {
            for c in 0..s.out_ch {
                wt[(j * s.out_ch + c) * s.in_ch + i] = w[(j * s.in_ch + i) * s.out_ch + c];
            }
        }
    }
    let mut dx = vec![F::zero(); x.len()];
    let mut dw = vec![F::zero(); w.len()];
    let mut db = vec![F::zero(); s.out_ch];
    for n in 0..s.batch {
        for t in 0..s.len {
            let dyr = &dy[(n * s.len + t) * s.out_ch..][..s.out_ch];
            for (c, &g) in dyr.iter().enumerate() {
                db[c] += g;
            }
            for j in 0..s.kernel {
                let Some(src) = s.source(t, j) else { continue };
                let xo = (n * s.len + src) * s.in_ch;
                for i in 0..s.in_ch {
                    axpy(&mut dw[(j * s.in_ch + i) * s.out_ch..][..s.out_ch], x[xo + i], dyr);
                }
                let dxr = &mut dx[xo..xo + s.in_ch];
                for (c, &g) in dyr.iter().enumerate() {
                    if g != F::zero() {
                        axpy(dxr, g, &wt[(j * s.out_ch + c) * s.in_ch..][..s.in_ch]);
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------- batch norm

/// Values kept from a train-mode batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
    pub mean: Vec<F>,
    /// Biased batch variance.
    pub var: Vec<F>,
    pub rows: usize,
}

/// Normalizes each channel of `x: [rows, ch]` with its batch statistics.
pub fn batchnorm_train_forward<F: Real>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    ch: usize,
) -> (Vec<F>, BnCache<F>) {
    let rows = x.len() / ch;
    let mut sum = vec![0.0f64; ch];
    for r in x.chunks_exact(ch) {
        for (s, &v) in sum.iter_mut().zip(r) {
            *s += v.f64();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
    let mut sq = vec![0.0f64; ch];
    for r in x.chunks_exact(ch) {
        for c in 0..ch {
            let d = r[c].f64() - mean[c];
            sq[c] += d * d;
        }
    }
    let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
    let inv_std: Vec<F> = var.iter().map(|v| F::of(1.0 / (v + BN_EPS).sqrt())).collect();
    let mean_f: Vec<F> = mean.iter().map(|&m| F::of(m)).collect();

    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for r in x.chunks_exact(ch) {
        for c in 0..ch {
            let h = (r[c] - mean_f[c]) * inv_std[c];
            xhat.push(h);
            y.push(gamma[c] * h + beta[c]);
        }
    }
    let cache = BnCache {
        xhat,
        inv_std,
        mean: mean_f,
        var: var.iter().map(|&v| F::of(v)).collect(),
        rows,
    };
    (y, cache)
}

/// Normalizes with fixed running statistics.
pub fn batchnorm_eval_forward<F: Real>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    running_mean: &[F],
    running_var: &[F],
    ch: usize,
) -> Vec<F> {
    let scale: Vec<F> = (0..ch)
        .map(|c| gamma[c] / (running_var[c] + F::of(BN_EPS)).sqrt())
        .collect();
    let mut y = Vec::with_capacity(x.len());
    for r in x.chunks_exact(ch) {
        for c in 0..ch {
            y.push((r[c] - running_mean[c]) * scale[c] + beta[c]);
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<F: Real>(
    dy: &[F],
    cache: &BnCache<F>,
    gamma: &[F],
    ch: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let m = cache.rows as f64;
    let mut sum_dy = vec![0.0f64; ch];
    let mut sum_dy_xhat = vec![0.0f64; ch];
    for (g, h) in dy.chunks_exact(ch).zip(cache.xhat.chunks_exact(ch)) {
        for c in 0..ch {
            sum_dy[c] += g[c].f64();
            sum_dy_xhat[c] += g[c].f64() * h[c].f64();
        }
    }
    let coef: Vec<F> = (0..ch).map(|c| gamma[c] * cache.inv_std[c]).collect();
    let mean_dy: Vec<F> = sum_dy.iter().map(|&s| F::of(s / m)).collect();
    let mean_dy_xhat: Vec<F> = sum_dy_xhat.iter().map(|&s| F::of(s / m)).collect();
    let mut dx = Vec::with_capacity(dy.len());
    for (g, h) in dy.chunks_exact(ch).zip(cache.xhat.chunks_exact(ch)) {
        for c in 0..ch {
            dx.push(coef[c] * (g[c] - mean_dy[c] - h[c] * mean_dy_xhat[c]));
        }
    }
    let dgamma = sum_dy_xhat.iter().map(|&s| F::of(s)).collect();
    let dbeta = sum_dy.iter().map(|&s| F::of(s)).collect();
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------- relu

pub fn relu_forward<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| v.max(F::zero())).collect()
}

/// Gradient through a ReLU given its output `y`.
pub fn relu_backward<F: Real>(dy: &[F], y: &[F]) -> Vec<F> {
    dy.iter()
        .zip(y)
        .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
        .collect()
}

// ---------------------------------------------------------------- max-pool

/// Global max over time: `[batch, len, ch] -> [batch, ch]` plus the winning
/// time step per output (first occurrence on ties).
pub fn maxpool_time_forward<F: Real>(
    x: &[F],
    batch: usize,
    len: usize,
    ch: usize,
) -> (Vec<F>, Vec<usize>) {
    let mut y = vec![F::neg_infinity(); batch * ch];
    let mut arg = vec![0usize; batch * ch];
    for n in 0..batch {
        let yr = &mut y[n * ch..(n + 1) * ch];
        let ar = &mut arg[n * ch..(n + 1) * ch];
        for t in 0..len {
            let xr = &x[(n * len + t) * ch..][..ch];
            for c in 0..ch {
                if xr[c] > yr[c] {
                    yr[c] = xr[c];
                    ar[c] = t;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool_time_backward<F: Real>(
    dy: &[F],
    argmax: &[usize],
    batch: usize,
    len: usize,
    ch: usize,
) -> Vec<F> {
    let mut dx = vec![F::zero(); batch * len * ch];
    for n in 0..batch {
        for c in 0..ch {
            let t = argmax[n * ch + c];
            dx[(n * len + t) * ch + c] += dy[n * ch + c];
        }
    }
    dx
}
