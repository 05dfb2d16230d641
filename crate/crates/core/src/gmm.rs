//! Diagonal-covariance Gaussian mixture fitted by EM in log space.
//!
//! Feature matrices are row-major `N × D` slices.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const MAGIC: &[u8; 4] = b"LGG1";
const FORMAT_VERSION: u32 = 1;
/// Components with less responsibility mass than this keep their parameters.
const EMPTY_MASS: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 200,
            tol: 1e-6,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    /// Number of M-steps performed.
    pub iterations: usize,
    pub final_log_likelihood: f64,
    /// Total log-likelihood before each M-step, ending with the final parameters.
    pub log_likelihood_history: Vec<f64>,
    pub converged: bool,
    /// All points were identical; one component carries all the weight.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    /// `K × D`, row-major.
    pub means: Vec<f64>,
    /// `K × D`, row-major, each `>= VARIANCE_FLOOR`.
    pub variances: Vec<f64>,
    /// Class index per component; empty until mapped.
    pub component_to_class: Vec<usize>,
    pub meta: FitMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmEval {
    /// Unweighted `ln N_k(x)` per component.
    pub log_densities: Vec<f64>,
    pub posteriors: Vec<f64>,
    pub most_likely: usize,
}

fn check_matrix(features: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::Fit("feature dimension must be at least 1".into()));
    }
    if features.len() % dim != 0 {
        return Err(Error::Dimension {
            expected: dim,
            got: features.len() % dim,
        });
    }
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("non-finite feature in row {}", i / dim)));
    }
    Ok(features.len() / dim)
}

fn data_variance(features: &[f64], dim: usize) -> Vec<f64> {
    let n = (features.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.into_iter().map(|v| (v / n).max(VARIANCE_FLOOR)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// k-means++ seeding: first centre uniform, later ones proportional to the
/// squared distance to the nearest chosen centre.
fn kmeans_pp(features: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.len() / dim;
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let mut centres = Vec::with_capacity(k * dim);
    centres.extend_from_slice(row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centres[..dim])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centres.len();
        centres.extend_from_slice(row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centres[start..]));
        }
    }
    centres
}

/// k-means++ centres, then weights, means and per-dimension variances of the
/// points nearest to each centre. A cluster with fewer than two points keeps
/// its centre and the variance of the whole data set.
fn initial_model(features: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> GmmModel {
    let seeds = kmeans_pp(features, dim, k, rng);
    let global = data_variance(features, dim);
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k * dim];
    let mut sq = vec![0.0; k * dim];
    for x in features.chunks_exact(dim) {
        let c = (0..k)
            .min_by(|&a, &b| sq_dist(x, &seeds[a * dim..(a + 1) * dim]).total_cmp(&sq_dist(x, &seeds[b * dim..(b + 1) * dim])))
            .expect("k >= 1");
        count[c] += 1;
        for (j, &v) in x.iter().enumerate() {
            sum[c * dim + j] += v;
            sq[c * dim + j] += v * v;
        }
    }
    let mut means = seeds;
    let mut variances = global.repeat(k);
    for c in 0..k {
        if count[c] < 2 {
            continue;
        }
        let m = count[c] as f64;
        for j in 0..dim {
            let mu = sum[c * dim + j] / m;
            means[c * dim + j] = mu;
            variances[c * dim + j] = (sq[c * dim + j] / m - mu * mu).max(VARIANCE_FLOOR);
        }
    }
    let total: usize = count.iter().map(|&c| c.max(1)).sum();
    GmmModel {
        dim,
        weights: count.iter().map(|&c| c.max(1) as f64 / total as f64).collect(),
        means,
        variances,
        component_to_class: Vec::new(),
        meta: FitMeta::default(),
    }
}

/// Fits a `k`-component mixture with EM.
pub fn fit(features: &[f64], dim: usize, k: usize, cfg: &FitConfig) -> Result<GmmModel> {
    let n = check_matrix(features, dim)?;
    if k == 0 {
        return Err(Error::Fit("need at least one component".into()));
    }
    if n < k {
        return Err(Error::Fit(format!("{n} points cannot support {k} components")));
    }
    let first = &features[..dim];
    if features.chunks_exact(dim).all(|r| r == first) {
        let mut weights = vec![0.0; k];
        weights[0] = 1.0;
        let mut model = GmmModel {
            dim,
            weights,
            means: first.repeat(k),
            variances: vec![VARIANCE_FLOOR; k * dim],
            component_to_class: Vec::new(),
            meta: FitMeta {
                degenerate: true,
                converged: true,
                ..FitMeta::default()
            },
        };
        let ll = model.log_likelihood(features)?;
        model.meta.final_log_likelihood = ll;
        model.meta.log_likelihood_history = vec![ll];
        return Ok(model);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = initial_model(features, dim, k, &mut rng);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (ll, resp) = model.e_step(features);
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if (ll - prev) < cfg.tol * prev.abs() {
                converged = true;
            }
        }
        history.push(ll);
        if converged || iterations == cfg.max_iter {
            break;
        }
        model.m_step(features, &resp);
        iterations += 1;
    }
    model.meta = FitMeta {
        iterations,
        final_log_likelihood: *history.last().expect("at least one E-step"),
        log_likelihood_history: history,
        converged,
        degenerate: false,
    };
    Ok(model)
}

/// One E-step then one M-step. Returns the updated model and the
/// log-likelihood of the input parameters.
pub fn em_step(model: &GmmModel, features: &[f64]) -> Result<(GmmModel, f64)> {
    check_matrix(features, model.dim)?;
    let (ll, resp) = model.e_step(features);
    let mut next = model.clone();
    next.m_step(features, &resp);
    Ok((next, ll))
}

impl GmmModel {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mu), var) in x.iter().zip(self.mean(k)).zip(self.variance(k)) {
            let d = xi - mu;
            acc += LN_2PI + var.ln() + d * d / var;
        }
        -0.5 * acc
    }

    /// Weighted log joint per component and the log-sum-exp over them.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) -> f64 {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.weights[k].ln() + self.component_log_density(k, x);
        }
        log_sum_exp(out)
    }

    fn e_step(&self, features: &[f64]) -> (f64, Vec<f64>) {
        let k = self.num_components();
        let mut resp = vec![0.0; features.len() / self.dim * k];
        let mut ll = 0.0;
        for (x, r) in features.chunks_exact(self.dim).zip(resp.chunks_exact_mut(k)) {
            let lse = self.log_joint(x, r);
            ll += lse;
            r.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        (ll, resp)
    }

    fn m_step(&mut self, features: &[f64], resp: &[f64]) {
        let k = self.num_components();
        let d = self.dim;
        let n = (features.len() / d) as f64;
        for c in 0..k {
            let mass: f64 = resp.iter().skip(c).step_by(k).sum();
            self.weights[c] = mass / n;
            if mass < EMPTY_MASS {
                continue;
            }
            let mut mean = vec![0.0; d];
            for (x, r) in features.chunks_exact(d).zip(resp.chunks_exact(k)) {
                mean.iter_mut().zip(x).for_each(|(m, xi)| *m += r[c] * xi);
            }
            mean.iter_mut().for_each(|m| *m /= mass);
            let mut var = vec![0.0; d];
            for (x, r) in features.chunks_exact(d).zip(resp.chunks_exact(k)) {
                for ((v, xi), m) in var.iter_mut().zip(x).zip(&mean) {
                    *v += r[c] * (xi - m) * (xi - m);
                }
            }
            self.means[c * d..(c + 1) * d].copy_from_slice(&mean);
            for (slot, v) in self.variances[c * d..(c + 1) * d].iter_mut().zip(var) {
                *slot = (v / mass).max(VARIANCE_FLOOR);
            }
        }
    }

    /// Total log-likelihood of the rows of `features`.
    pub fn log_likelihood(&self, features: &[f64]) -> Result<f64> {
        check_matrix(features, self.dim)?;
        Ok(self.e_step(features).0)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<GmmEval> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite point".into()));
        }
        let k = self.num_components();
        let log_densities: Vec<f64> = (0..k).map(|c| self.component_log_density(c, x)).collect();
        let mut posteriors = vec![0.0; k];
        let lse = self.log_joint(x, &mut posteriors);
        posteriors.iter_mut().for_each(|v| *v = (*v - lse).exp());
        let mut most_likely = 0;
        for (c, &p) in posteriors.iter().enumerate() {
            if p > posteriors[most_likely] {
                most_likely = c;
            }
        }
        Ok(GmmEval {
            log_densities,
            posteriors,
            most_likely,
        })
    }

    pub fn with_class_map(mut self, map: Vec<usize>) -> Result<Self> {
        if map.len() != self.num_components() {
            return Err(Error::Shape(format!(
                "class map has {} entries for {} components",
                map.len(),
                self.num_components()
            )));
        }
        self.component_to_class = map;
        Ok(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            components: self.num_components(),
            dim: self.dim,
            component_to_class: self.component_to_class.clone(),
            meta: self.meta.clone(),
        };
        let values = self.weights.iter().chain(&self.means).chain(&self.variances).copied();
        container::encode(MAGIC, &header, &container::f64_bytes(values))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, blob): (Header, &[u8]) = container::decode(bytes, MAGIC)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "gmm version {} unsupported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let values = container::read_f64s(blob)?;
        let (k, d) = (header.components, header.dim);
        if values.len() != k + 2 * k * d {
            return Err(Error::Shape(format!(
                "header declares {k} components of dimension {d}, blob holds {} values",
                values.len()
            )));
        }
        if !header.component_to_class.is_empty() && header.component_to_class.len() != k {
            return Err(Error::Shape("class map length differs from component count".into()));
        }
        Ok(GmmModel {
            dim: d,
            weights: values[..k].to_vec(),
            means: values[k..k + k * d].to_vec(),
            variances: values[k + k * d..].to_vec(),
            component_to_class: header.component_to_class,
            meta: header.meta,
        })
    }

    pub fn report(&self) -> GmmReport {
        GmmReport {
            components: self.num_components(),
            dim: self.dim,
            iterations: self.meta.iterations,
            final_log_likelihood: self.meta.final_log_likelihood,
            converged: self.meta.converged,
            degenerate: self.meta.degenerate,
            component_to_class: self.component_to_class.clone(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    components: usize,
    dim: usize,
    component_to_class: Vec<usize>,
    meta: FitMeta,
}

/// Summary written as `gmm_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmReport {
    pub components: usize,
    pub dim: usize,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
    pub degenerate: bool,
    pub component_to_class: Vec<usize>,
    pub weights: Vec<f64>,
}

impl GmmReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Majority true class among the points hard-assigned to each component
/// (lower class wins ties). A component with no points takes the class of
/// the non-empty component whose mean is nearest.
pub fn map_components_to_classes(
    model: &GmmModel,
    features: &[f64],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<usize>> {
    let n = check_matrix(features, model.dim)?;
    if n != labels.len() {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    let k = model.num_components();
    let mut votes = vec![vec![0usize; num_classes]; k];
    for (x, &y) in features.chunks_exact(model.dim).zip(labels) {
        if y >= num_classes {
            return Err(Error::Contract(format!("label {y} outside {num_classes} classes")));
        }
        votes[model.evaluate(x)?.most_likely][y] += 1;
    }
    let majority = |v: &[usize]| {
        let mut best = 0;
        for (c, &count) in v.iter().enumerate() {
            if count > v[best] {
                best = c;
            }
        }
        best
    };
    let populated: Vec<usize> = (0..k).filter(|&c| votes[c].iter().any(|&v| v > 0)).collect();
    Ok((0..k)
        .map(|c| {
            if populated.contains(&c) {
                return majority(&votes[c]);
            }
            let nearest = populated
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    sq_dist(model.mean(c), model.mean(a)).total_cmp(&sq_dist(model.mean(c), model.mean(b)))
                })
                .expect("at least one labelled point");
            majority(&votes[nearest])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| if i % 2 == 0 { -5.0 } else { 5.0 } + noise.sample(&mut rng))
            .collect()
    }

    fn model_1d(means: &[f64], vars: &[f64]) -> GmmModel {
        GmmModel {
            dim: 1,
            weights: vec![1.0 / means.len() as f64; means.len()],
            means: means.to_vec(),
            variances: vars.to_vec(),
            component_to_class: Vec::new(),
            meta: FitMeta::default(),
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let x = [1.0, 2.0, 4.0, 3.0, 0.0, 7.0, -1.0, 2.5];
        let m = fit(&x, 2, 1, &FitConfig::default()).unwrap();
        let var = data_variance(&x, 2);
        assert!((m.means[0] - 1.0).abs() < 1e-12);
        assert!((m.means[1] - 3.625).abs() < 1e-12);
        assert!((m.variances[0] - var[0]).abs() < 1e-12);
        assert!((m.variances[1] - var[1]).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let x = blobs(2000, 7);
        let m = fit(&x, 1, 2, &FitConfig::default()).unwrap();
        let mut mu = m.means.clone();
        mu.sort_by(f64::total_cmp);
        assert!((mu[0] + 5.0).abs() < 0.1 && (mu[1] - 5.0).abs() < 0.1, "{mu:?}");
        for w in m.meta.log_likelihood_history.windows(2) {
            assert!(w[1] - w[0] >= -1e-9);
        }
    }

    #[test]
    fn fit_is_seeded() {
        let x = blobs(300, 1);
        let cfg = FitConfig::default();
        assert_eq!(fit(&x, 1, 3, &cfg).unwrap(), fit(&x, 1, 3, &cfg).unwrap());
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(fit(&[1.0, 2.0], 1, 3, &FitConfig::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let x = vec![2.0; 20];
        let m = fit(&x, 2, 3, &FitConfig::default()).unwrap();
        assert!(m.meta.degenerate);
        assert_eq!(m.weights, vec![1.0, 0.0, 0.0]);
        assert!(m.variances.iter().all(|&v| v == VARIANCE_FLOOR));
        let e = m.evaluate(&[2.0, 2.0]).unwrap();
        assert_eq!(e.most_likely, 0);
        assert!((e.posteriors[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_density() {
        let m = model_1d(&[0.0], &[1.0]);
        let e = m.evaluate(&[0.0]).unwrap();
        assert!((e.log_densities[0].exp() - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!(m.evaluate(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn posterior_symmetry_and_limits() {
        let m = model_1d(&[-3.0, 3.0], &[1.0, 1.0]);
        let mid = m.evaluate(&[0.0]).unwrap();
        assert!((mid.posteriors[0] - 0.5).abs() < 1e-12);
        assert_eq!(mid.most_likely, 0);
        let far = model_1d(&[-300.0, 300.0], &[1.0, 1.0]);
        assert!((far.evaluate(&[300.0]).unwrap().posteriors[1] - 1.0).abs() < 1e-12);
        let huge = far.evaluate(&[1e6]).unwrap();
        assert!(huge.posteriors.iter().all(|p| p.is_finite()));
        assert!((huge.posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn majority_mapping() {
        let m = model_1d(&[0.0, 10.0, 20.0], &[1.0, 1.0, 1.0]);
        // component 0: {A:3, B:1}; component 1: {A:2, B:2}; component 2: empty
        let x = [0.0, 0.1, -0.1, 0.2, 10.0, 10.1, 9.9, 10.2];
        let y = [0, 0, 0, 1, 0, 1, 1, 0];
        assert_eq!(map_components_to_classes(&m, &x, &y, 2).unwrap(), vec![0, 0, 0]);
        let aligned = map_components_to_classes(&m, &[0.0, 10.0, 20.0], &[2, 0, 1], 3).unwrap();
        assert_eq!(aligned, vec![2, 0, 1]);
        // empty component 2 copies its nearest populated neighbour (component 1)
        let sparse = map_components_to_classes(&m, &[0.0, 10.0], &[0, 1], 2).unwrap();
        assert_eq!(sparse, vec![0, 1, 1]);
    }

    #[test]
    fn save_load_round_trip() {
        let x = blobs(200, 3);
        let m = fit(&x, 1, 2, &FitConfig::default())
            .unwrap()
            .with_class_map(vec![1, 0])
            .unwrap();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LGG1");
        assert_eq!(GmmModel::from_bytes(&bytes).unwrap(), m);
        assert!(matches!(GmmModel::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(GmmModel::from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Shape(_))));
    }
}
