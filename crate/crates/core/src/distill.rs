//! Teacher feature extraction, mixture fitting on those features, and the
//! per-sample transfer signals `(p, dist)` that drive the student loss.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::gmm::{self, FitConfig, GmmModel};
use crate::losses;
use crate::neuralnet::{Checkpoint, Mode, Network};
use crate::vectorize::TokenSequence;

const MAGIC: &[u8; 4] = b"LGF1";
const FORMAT_VERSION: u32 = 1;
/// Rows per eval-mode forward pass when extracting features.
const EXTRACT_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMode {
    /// Posterior mass of the components mapped to the true class.
    #[default]
    TrueClassPosterior,
    /// Largest posterior.
    MostLikelyPosterior,
    /// Unweighted density of the most likely component, capped at 1.
    ClampedPdf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistMode {
    /// Whole `latent ‖ logits` vector.
    #[default]
    Feature,
    /// Logits part only.
    Logits,
}

impl std::str::FromStr for PMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_class_posterior" => Ok(PMode::TrueClassPosterior),
            "most_likely_posterior" => Ok(PMode::MostLikelyPosterior),
            "clamped_pdf" => Ok(PMode::ClampedPdf),
            other => Err(Error::Config(format!("unknown p_mode {other:?}"))),
        }
    }
}

impl std::str::FromStr for DistMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(DistMode::Feature),
            "logits" => Ok(DistMode::Logits),
            other => Err(Error::Config(format!("unknown dist_mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub p_mode: PMode,
    pub dist_mode: DistMode,
    /// Divide the distance by the square root of the compared length.
    pub dist_normalize: bool,
    /// Treat `p` and `dist` as constants of the student.
    pub stop_gradient_signals: bool,
    /// Mixture size; `None` means one component per class.
    pub components: Option<usize>,
    pub fit: FitConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            p_mode: PMode::default(),
            dist_mode: DistMode::default(),
            dist_normalize: false,
            stop_gradient_signals: false,
            components: None,
            fit: FitConfig::default(),
        }
    }
}

/// Teacher feature vectors keyed by sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherFeatureStore {
    pub latent_dim: usize,
    pub dim: usize,
    /// SHA-256 of the teacher checkpoint file.
    pub teacher_digest: String,
    ids: Vec<u64>,
    /// `N × dim`, row-major, in `ids` order.
    values: Vec<f64>,
    index: HashMap<u64, usize>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    format_version: u32,
    latent_dim: usize,
    dim: usize,
    teacher_digest: String,
    ids: Vec<u64>,
}

impl TeacherFeatureStore {
    pub fn new(latent_dim: usize, dim: usize, teacher_digest: String, ids: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != ids.len() * dim || latent_dim > dim {
            return Err(Error::Shape(format!(
                "{} values for {} ids of dimension {dim}",
                values.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::DuplicateId { id, row: row + 1 });
            }
        }
        Ok(TeacherFeatureStore {
            latent_dim,
            dim,
            teacher_digest,
            ids,
            values,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Row-major `N × dim` matrix in `ids()` order.
    pub fn matrix(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, id: u64) -> Result<&[f64]> {
        let row = *self.index.get(&id).ok_or(Error::UnknownSample(id))?;
        Ok(&self.values[row * self.dim..(row + 1) * self.dim])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = StoreHeader {
            format_version: FORMAT_VERSION,
            latent_dim: self.latent_dim,
            dim: self.dim,
            teacher_digest: self.teacher_digest.clone(),
            ids: self.ids.clone(),
        };
        // Features come out of an f32 network, so the narrowing is exact.
        container::encode(MAGIC, &header, &container::f32_bytes(self.values.iter().map(|&v| v as f32)))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, blob): (StoreHeader, &[u8]) = container::decode(bytes, MAGIC)?;
        if h.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("feature store version {} unsupported", h.format_version)));
        }
        let values: Vec<f64> = container::read_f32s(blob)?.into_iter().map(f64::from).collect();
        Self::new(h.latent_dim, h.dim, h.teacher_digest, h.ids, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

/// Runs `net` in eval mode over `seqs` and yields one feature vector per sample.
pub fn extract_features(net: &Network<f32>, seqs: &[TokenSequence]) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(seqs.len() * net.config.feature_dim());
    for chunk in seqs.chunks(EXTRACT_BATCH) {
        let out = net.forward(chunk, Mode::Eval)?;
        for i in 0..chunk.len() {
            values.extend(out.features(i).values);
        }
    }
    Ok(values)
}

pub fn extract_teacher_features(
    teacher: &Network<f32>,
    seqs: &[TokenSequence],
    teacher_digest: &str,
) -> Result<TeacherFeatureStore> {
    let values = extract_features(teacher, seqs)?;
    TeacherFeatureStore::new(
        teacher.config.latent_dim,
        teacher.config.feature_dim(),
        teacher_digest.to_string(),
        seqs.iter().map(|s| s.id).collect(),
        values,
    )
}

/// `sqrt(sum (a_i - b_i)^2)`, divided by `sqrt(len)` when `normalize`.
pub fn euclidean_distance(a: &[f64], b: &[f64], normalize: bool) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(if normalize && !a.is_empty() {
        d / (a.len() as f64).sqrt()
    } else {
        d
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSignal {
    pub p: f64,
    pub dist: f64,
    /// Most likely mixture component of the student feature.
    pub component: usize,
}

/// Signal plus its gradients with respect to the student feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalGrad {
    pub signal: TransferSignal,
    pub d_p: Vec<f64>,
    pub d_dist: Vec<f64>,
}

/// Frozen teacher side of the student objective.
#[derive(Clone, Copy, Debug)]
pub struct SignalContext<'a> {
    pub store: &'a TeacherFeatureStore,
    pub gmm: &'a GmmModel,
    pub config: &'a DistillConfig,
}

impl SignalContext<'_> {
    pub fn signal(&self, student: &[f64], id: u64, true_class: usize) -> Result<TransferSignal> {
        Ok(compute(self, student, id, true_class, false)?.signal)
    }

    pub fn signal_with_grad(&self, student: &[f64], id: u64, true_class: usize) -> Result<SignalGrad> {
        compute(self, student, id, true_class, true)
    }

    /// Every id in `ids` has a teacher vector.
    pub fn check_coverage(&self, ids: impl IntoIterator<Item = u64>) -> Result<()> {
        for id in ids {
            self.store.get(id)?;
        }
        Ok(())
    }
}

pub fn compute_signal(
    student: &[f64],
    id: u64,
    store: &TeacherFeatureStore,
    gmm: &GmmModel,
    true_class: usize,
    config: &DistillConfig,
) -> Result<TransferSignal> {
    SignalContext { store, gmm, config }.signal(student, id, true_class)
}

fn compute(ctx: &SignalContext, f: &[f64], id: u64, true_class: usize, want_grad: bool) -> Result<SignalGrad> {
    let teacher = ctx.store.get(id)?;
    if f.len() != teacher.len() {
        return Err(Error::Dimension {
            expected: teacher.len(),
            got: f.len(),
        });
    }
    let gmm = ctx.gmm;
    let eval = gmm.evaluate(f)?;
    let m = eval.most_likely;
    let k = gmm.num_components();
    let dim = f.len();

    // d log N_k / d f
    let score = |c: usize| -> Vec<f64> {
        f.iter()
            .zip(gmm.mean(c))
            .zip(gmm.variance(c))
            .map(|((x, mu), var)| -(x - mu) / var)
            .collect()
    };
    let mut d_p = vec![0.0; dim];
    let mean_score = |post: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; dim];
        for (c, &r) in post.iter().enumerate() {
            if r > 0.0 {
                g.iter_mut().zip(score(c)).for_each(|(a, s)| *a += r * s);
            }
        }
        g
    };
    let p = match ctx.config.p_mode {
        PMode::TrueClassPosterior => {
            if gmm.component_to_class.len() != k {
                return Err(Error::Contract("mixture components are not mapped to classes".into()));
            }
            let members: Vec<usize> = (0..k).filter(|&c| gmm.component_to_class[c] == true_class).collect();
            if want_grad && !members.is_empty() {
                let g_bar = mean_score(&eval.posteriors);
                for &c in &members {
                    let r = eval.posteriors[c];
                    for ((d, s), gb) in d_p.iter_mut().zip(score(c)).zip(&g_bar) {
                        *d += r * (s - gb);
                    }
                }
            }
            members.iter().map(|&c| eval.posteriors[c]).sum::<f64>()
        }
        PMode::MostLikelyPosterior => {
            let r = eval.posteriors[m];
            if want_grad {
                let g_bar = mean_score(&eval.posteriors);
                for ((d, s), gb) in d_p.iter_mut().zip(score(m)).zip(&g_bar) {
                    *d = r * (s - gb);
                }
            }
            r
        }
        PMode::ClampedPdf => {
            let density = eval.log_densities[m].exp();
            if density < 1.0 {
                if want_grad {
                    d_p.iter_mut().zip(score(m)).for_each(|(d, s)| *d = density * s);
                }
                density
            } else {
                1.0
            }
        }
    };
    let p = p.clamp(0.0, 1.0);

    let start = match ctx.config.dist_mode {
        DistMode::Feature => 0,
        DistMode::Logits => ctx.store.latent_dim,
    };
    let dist = euclidean_distance(&f[start..], &teacher[start..], ctx.config.dist_normalize)?;
    let mut d_dist = vec![0.0; dim];
    if want_grad && dist > 0.0 {
        let raw = euclidean_distance(&f[start..], &teacher[start..], false)?;
        let scale = if ctx.config.dist_normalize {
            1.0 / ((dim - start) as f64).sqrt()
        } else {
            1.0
        };
        for ((d, a), b) in d_dist[start..].iter_mut().zip(&f[start..]).zip(&teacher[start..]) {
            *d = scale * (a - b) / raw;
        }
    }
    if !(0.0..=1.0).contains(&p) || !dist.is_finite() {
        return Err(Error::Contract(format!("signal out of range: p={p} dist={dist}")));
    }
    Ok(SignalGrad {
        signal: TransferSignal { p, dist, component: m },
        d_p,
        d_dist,
    })
}

/// Fits the mixture on the store and maps components to classes.
pub fn fit_mixture(store: &TeacherFeatureStore, labels: &[usize], num_classes: usize, cfg: &DistillConfig) -> Result<GmmModel> {
    let k = cfg.components.unwrap_or(num_classes);
    let model = gmm::fit(store.matrix(), store.dim, k, &cfg.fit)?;
    let map = gmm::map_components_to_classes(&model, store.matrix(), labels, num_classes)?;
    model.with_class_map(map)
}

/// Teacher features for the training set, then the mixture fitted on them.
pub fn run_algorithm1(
    teacher: &Checkpoint,
    teacher_digest: &str,
    seqs: &[TokenSequence],
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<(TeacherFeatureStore, GmmModel)> {
    if seqs.len() != labels.len() {
        return Err(Error::Dimension {
            expected: seqs.len(),
            got: labels.len(),
        });
    }
    let net = teacher.network();
    let store = extract_teacher_features(&net, seqs, teacher_digest)?;
    let model = fit_mixture(&store, labels, teacher.config.num_classes, cfg)?;
    Ok((store, model))
}

/// Eval-mode signals for every sample; the audit view of what the student sees.
pub fn corpus_signals(
    student: &Network<f32>,
    seqs: &[TokenSequence],
    labels: &[usize],
    ctx: &SignalContext,
) -> Result<Vec<(u64, TransferSignal)>> {
    let values = extract_features(student, seqs)?;
    let dim = student.config.feature_dim();
    seqs.iter()
        .zip(labels)
        .zip(values.chunks_exact(dim))
        .map(|((s, &y), f)| Ok((s.id, ctx.signal(f, s.id, y)?)))
        .collect()
}

/// Mean latent term over precomputed signals.
pub fn mean_latentg(signals: &[(u64, TransferSignal)], alpha: f64, beta: f64) -> Result<f64> {
    let mut sum = 0.0;
    for (_, s) in signals {
        sum += losses::latentg_term(s.p, s.dist, alpha, beta)?;
    }
    Ok(sum / signals.len().max(1) as f64)
}

/// `id,p,dist,component` rows.
pub fn write_signals(path: &Path, signals: &[(u64, TransferSignal)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "p", "dist", "component"])?;
    for (id, s) in signals {
        w.write_record([id.to_string(), s.p.to_string(), s.dist.to_string(), s.component.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::FitMeta;

    fn gmm_1d(means: &[f64], map: Vec<usize>) -> GmmModel {
        GmmModel {
            dim: means.len() / map.len(),
            weights: vec![1.0 / map.len() as f64; map.len()],
            means: means.to_vec(),
            variances: vec![1.0; means.len()],
            component_to_class: map,
            meta: FitMeta::default(),
        }
    }

    fn store(latent_dim: usize, rows: &[&[f64]]) -> TeacherFeatureStore {
        let dim = rows[0].len();
        TeacherFeatureStore::new(
            latent_dim,
            dim,
            "t".into(),
            (0..rows.len() as u64).collect(),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn distances() {
        assert_eq!(euclidean_distance(&[1.0, 2.0], &[1.0, 2.0], false).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0], false).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.0; 4], &[0.0; 4], true).unwrap(), 1.0);
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0], false).is_err());
    }

    #[test]
    fn perfect_alignment_gives_zero_term() {
        let s = store(1, &[&[4.0, 0.0]]);
        let g = gmm_1d(&[4.0, 0.0, -40.0, 0.0], vec![2, 0]);
        let cfg = DistillConfig::default();
        let sig = compute_signal(&[4.0, 0.0], 0, &s, &g, 2, &cfg).unwrap();
        assert_eq!(sig.dist, 0.0);
        assert!((sig.p - 1.0).abs() < 1e-12);
        assert!(losses::latentg_term(sig.p, sig.dist, 0.56, 0.44).unwrap() < 1e-12);
    }

    #[test]
    fn midpoint_is_half() {
        let s = store(1, &[&[0.0]]);
        let g = gmm_1d(&[-2.0, 2.0], vec![0, 1]);
        let sig = compute_signal(&[0.0], 0, &s, &g, 0, &DistillConfig::default()).unwrap();
        assert!((sig.p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn logits_mode_ignores_latent_part() {
        let teacher: &[f64] = &[1.0, 2.0, 3.0, 0.5, -0.5];
        let student = [4.0, -2.0, 3.0, 1.5, 1.5];
        let s = store(3, &[teacher]);
        let g = gmm_1d(&[0.0; 5], vec![0]);
        let feat = DistillConfig::default();
        let logits = DistillConfig {
            dist_mode: DistMode::Logits,
            ..DistillConfig::default()
        };
        // full: 9 + 16 + 0 + 1 + 4
        let a = compute_signal(&student, 0, &s, &g, 0, &feat).unwrap();
        assert!((a.dist - 30f64.sqrt()).abs() < 1e-12);
        let b = compute_signal(&student, 0, &s, &g, 0, &logits).unwrap();
        assert!((b.dist - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unknown_id_is_named() {
        let s = store(1, &[&[0.0, 0.0]]);
        let g = gmm_1d(&[0.0, 0.0], vec![0]);
        let err = compute_signal(&[0.0, 0.0], 77, &s, &g, 0, &DistillConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownSample(77)));
    }

    #[test]
    fn clamped_pdf_stays_in_unit_interval() {
        let s = store(1, &[&[0.0]]);
        let mut g = gmm_1d(&[0.0], vec![0]);
        g.variances = vec![1e-4];
        let cfg = DistillConfig {
            p_mode: PMode::ClampedPdf,
            ..DistillConfig::default()
        };
        assert_eq!(compute_signal(&[0.0], 0, &s, &g, 0, &cfg).unwrap().p, 1.0);
    }

    #[test]
    fn store_round_trip() {
        let s = store(1, &[&[0.25, -3.0], &[1.5, 2.0]]);
        let back = TeacherFeatureStore::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.get(1).unwrap(), &[1.5, 2.0]);
    }
}
