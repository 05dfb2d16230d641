//! Classical bag-of-words baselines: softmax regression on TF-IDF vectors and
//! multinomial naive Bayes on raw term counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{stratified_fold_assignment, Corpus};
use crate::error::{Error, Result};
use crate::losses::{log_sum_exp, softmax};
use crate::trainer::MetricsReport;
use crate::vectorize::{IdfTable, SparseVector};

fn check_input(x: &[SparseVector], y: &[usize], k: usize, v: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Fit("empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= k) {
        return Err(Error::Contract(format!("label {bad} outside {k} classes")));
    }
    check_terms(x, v)
}

fn check_terms(x: &[SparseVector], v: usize) -> Result<()> {
    for row in x {
        if let Some(&(i, _)) = row.entries.last() {
            if i >= v {
                return Err(Error::Dimension {
                    expected: v,
                    got: i + 1,
                });
            }
        }
    }
    Ok(())
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            lr: 0.5,
            epochs: 30,
            l2: 0.0,
            batch_size: 32,
            seed: 42,
        }
    }
}

/// Softmax regression with weights `K × V` and a bias per class.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    pub num_classes: usize,
    pub num_terms: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub l2: f64,
}

impl LogRegModel {
    pub fn zeros(num_classes: usize, num_terms: usize, l2: f64) -> Self {
        LogRegModel {
            num_classes,
            num_terms,
            weights: vec![0.0; num_classes * num_terms],
            bias: vec![0.0; num_classes],
            l2,
        }
    }

    fn logits(&self, x: &SparseVector) -> Vec<f64> {
        let v = self.num_terms;
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * v..(c + 1) * v];
                self.bias[c] + x.entries.iter().map(|&(i, w)| row[i] * w).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &SparseVector) -> Result<Vec<f64>> {
        check_terms(std::slice::from_ref(x), self.num_terms)?;
        Ok(softmax(&self.logits(x)))
    }

    /// Class with the highest probability (lowest index on ties) and all probabilities.
    pub fn predict(&self, x: &SparseVector) -> Result<(usize, Vec<f64>)> {
        let p = self.predict_proba(x)?;
        Ok((argmax(&p), p))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Mean cross-entropy over `rows` plus `(l2/2)‖W‖²`, with gradients for
    /// weights and bias.
    pub fn objective(&self, x: &[SparseVector], y: &[usize], rows: &[usize]) -> (f64, Vec<f64>, Vec<f64>) {
        let (k, v) = (self.num_classes, self.num_terms);
        let mut gw = vec![0.0; k * v];
        let mut gb = vec![0.0; k];
        let inv = 1.0 / rows.len() as f64;
        let mut value = 0.0;
        for &r in rows {
            let z = self.logits(&x[r]);
            value += log_sum_exp(&z) - z[y[r]];
            let p = softmax(&z);
            for c in 0..k {
                let d = (p[c] - if c == y[r] { 1.0 } else { 0.0 }) * inv;
                gb[c] += d;
                let row = &mut gw[c * v..(c + 1) * v];
                for &(i, w) in &x[r].entries {
                    row[i] += d * w;
                }
            }
        }
        let mut reg = 0.0;
        if self.l2 != 0.0 {
            for (g, w) in gw.iter_mut().zip(&self.weights) {
                *g += self.l2 * w;
                reg += w * w;
            }
        }
        (value * inv + 0.5 * self.l2 * reg, gw, gb)
    }
}

/// Mini-batch gradient descent from zero weights.
pub fn train_logreg(
    x: &[SparseVector],
    y: &[usize],
    num_classes: usize,
    num_terms: usize,
    cfg: &LogRegConfig,
) -> Result<LogRegModel> {
    check_input(x, y, num_classes, num_terms)?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::Config("logreg needs batch_size > 0, lr > 0 and l2 >= 0".into()));
    }
    let mut model = LogRegModel::zeros(num_classes, num_terms, cfg.l2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (value, gw, gb) = model.objective(x, y, batch);
            if !value.is_finite() {
                return Err(Error::Divergence(format!("logreg epoch {epoch}: loss {value}")));
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.lr * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= cfg.lr * g;
            }
        }
    }
    if model.weights.iter().chain(&model.bias).any(|w| !w.is_finite()) {
        return Err(Error::Divergence("logreg parameters became non-finite".into()));
    }
    Ok(model)
}

/// Hyperparameter grid and fold count for [`grid_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub lr: Vec<f64>,
    pub l2: Vec<f64>,
    pub folds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub l2: f64,
    pub mean_accuracy: f64,
}

/// Stratified `folds`-fold search over `lr × l2`; the first best point in
/// grid order wins.
pub fn grid_search(
    x: &[SparseVector],
    y: &[usize],
    num_classes: usize,
    num_terms: usize,
    base: &LogRegConfig,
    grid: &SearchGrid,
) -> Result<(LogRegConfig, Vec<GridPoint>)> {
    check_input(x, y, num_classes, num_terms)?;
    let folds = grid.folds;
    let fold = stratified_fold_assignment(y, num_classes, folds, base.seed)?;
    let mut points = Vec::new();
    let mut best: Option<(f64, LogRegConfig)> = None;
    for &lr in &grid.lr {
        for &l2 in &grid.l2 {
            let cfg = LogRegConfig { lr, l2, ..base.clone() };
            let mut acc = 0.0;
            for f in 0..folds {
                let (train, val): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| fold[i] != f);
                let tx: Vec<SparseVector> = train.iter().map(|&i| x[i].clone()).collect();
                let ty: Vec<usize> = train.iter().map(|&i| y[i]).collect();
                let m = train_logreg(&tx, &ty, num_classes, num_terms, &cfg)?;
                let mut correct = 0;
                for &i in &val {
                    correct += usize::from(m.predict(&x[i])?.0 == y[i]);
                }
                acc += correct as f64 / val.len().max(1) as f64;
            }
            let mean_accuracy = acc / folds as f64;
            points.push(GridPoint { lr, l2, mean_accuracy });
            if best.as_ref().is_none_or(|(a, _)| mean_accuracy > *a) {
                best = Some((mean_accuracy, cfg));
            }
        }
    }
    let (_, cfg) = best.ok_or_else(|| Error::Config("empty hyperparameter grid".into()))?;
    Ok((cfg, points))
}

/// Multinomial naive Bayes with add-one smoothing.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveBayesModel {
    pub num_terms: usize,
    pub log_priors: Vec<f64>,
    /// `K × V` smoothed term probabilities `P(t|c)`.
    pub term_probs: Vec<f64>,
    /// Natural log of `term_probs`.
    pub log_likelihoods: Vec<f64>,
}

impl NaiveBayesModel {
    /// Unnormalized log posteriors `log P(c) + sum count * log P(t|c)`.
    pub fn scores(&self, counts: &SparseVector) -> Result<Vec<f64>> {
        check_terms(std::slice::from_ref(counts), self.num_terms)?;
        let v = self.num_terms;
        Ok(self
            .log_priors
            .iter()
            .enumerate()
            .map(|(c, lp)| {
                let row = &self.log_likelihoods[c * v..(c + 1) * v];
                lp + counts.entries.iter().map(|&(i, n)| n * row[i]).sum::<f64>()
            })
            .collect())
    }

    pub fn predict_proba(&self, counts: &SparseVector) -> Result<Vec<f64>> {
        let s = self.scores(counts)?;
        let lse = log_sum_exp(&s);
        Ok(s.iter().map(|v| (v - lse).exp()).collect())
    }

    pub fn predict(&self, counts: &SparseVector) -> Result<(usize, Vec<f64>)> {
        let s = self.scores(counts)?;
        Ok((argmax(&s), s))
    }
}

/// `P(t|c) = (count(t, c) + 1) / (total(c) + V)`; every class needs a document.
pub fn train_nb(counts: &[SparseVector], y: &[usize], num_classes: usize, num_terms: usize) -> Result<NaiveBayesModel> {
    check_input(counts, y, num_classes, num_terms)?;
    let mut docs = vec![0usize; num_classes];
    let mut term = vec![0.0; num_classes * num_terms];
    for (x, &c) in counts.iter().zip(y) {
        docs[c] += 1;
        for &(i, n) in &x.entries {
            term[c * num_terms + i] += n;
        }
    }
    if let Some(c) = docs.iter().position(|&d| d == 0) {
        return Err(Error::Fit(format!("class {c} has no training documents")));
    }
    let n = counts.len() as f64;
    let v = num_terms as f64;
    let mut term_probs = vec![0.0; num_classes * num_terms];
    for c in 0..num_classes {
        let row = &term[c * num_terms..(c + 1) * num_terms];
        let denom = row.iter().sum::<f64>() + v;
        for (out, &cnt) in term_probs[c * num_terms..(c + 1) * num_terms].iter_mut().zip(row) {
            *out = (cnt + 1.0) / denom;
        }
    }
    Ok(NaiveBayesModel {
        num_terms,
        log_priors: docs.iter().map(|&d| (d as f64 / n).ln()).collect(),
        log_likelihoods: term_probs.iter().map(|p| p.ln()).collect(),
        term_probs,
    })
}

/// Everything written to `baseline_metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub config_digest: String,
    pub logreg_selected: LogRegConfig,
    pub logreg_grid: Vec<GridPoint>,
    pub logistic_regression: MetricsReport,
    pub naive_bayes: MetricsReport,
}

impl BaselineReport {
    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Fits both baselines on cleaned `train` and scores them on `test`.
pub fn run_baselines(train: &Corpus, test: &Corpus, cfg: &RunConfig) -> Result<BaselineReport> {
    let idf = IdfTable::fit(train)?;
    let (k, v) = (train.num_classes(), idf.num_terms());
    let names = train.labels().names().to_vec();
    let texts = |c: &Corpus| -> Vec<String> { c.samples().iter().map(|s| c.text_of(s).to_string()).collect() };
    let (train_text, test_text) = (texts(train), texts(test));
    let (ytr, yte) = (train.label_indices(), test.label_indices());

    let xtr: Vec<SparseVector> = train_text.iter().map(|t| idf.transform(t)).collect();
    let xte: Vec<SparseVector> = test_text.iter().map(|t| idf.transform(t)).collect();
    let base = LogRegConfig {
        lr: cfg.baseline.lr_grid[0],
        epochs: cfg.baseline.epochs,
        l2: cfg.baseline.l2_grid[0],
        batch_size: cfg.baseline.batch_size,
        seed: cfg.seed,
    };
    let search = SearchGrid {
        lr: cfg.baseline.lr_grid.clone(),
        l2: cfg.baseline.l2_grid.clone(),
        folds: cfg.baseline.folds,
    };
    let (chosen, grid) = grid_search(&xtr, &ytr, k, v, &base, &search)?;
    let lr_model = train_logreg(&xtr, &ytr, k, v, &chosen)?;
    let lr_pred = xte.iter().map(|x| lr_model.predict(x).map(|p| p.0)).collect::<Result<Vec<_>>>()?;

    let ctr: Vec<SparseVector> = train_text.iter().map(|t| idf.counts(t)).collect();
    let cte: Vec<SparseVector> = test_text.iter().map(|t| idf.counts(t)).collect();
    let nb = train_nb(&ctr, &ytr, k, v)?;
    let nb_pred = cte.iter().map(|x| nb.predict(x).map(|p| p.0)).collect::<Result<Vec<_>>>()?;

    let digest = cfg.digest();
    Ok(BaselineReport {
        logistic_regression: MetricsReport::from_predictions(&yte, &lr_pred, &names)?.with_digest(&digest),
        naive_bayes: MetricsReport::from_predictions(&yte, &nb_pred, &names)?.with_digest(&digest),
        config_digest: digest,
        logreg_selected: chosen,
        logreg_grid: grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(entries: &[(usize, f64)]) -> SparseVector {
        SparseVector {
            entries: entries.to_vec(),
        }
    }

    #[test]
    fn nb_hand_example() {
        // docs ("a a", c0), ("b", c1) over V = {a, b}
        let x = [sv(&[(0, 2.0)]), sv(&[(1, 1.0)])];
        let m = train_nb(&x, &[0, 1], 2, 2).unwrap();
        assert_eq!(m.term_probs[0], 0.75);
        assert_eq!(m.term_probs[1], 0.25);
        assert_eq!(m.log_priors[0], m.log_priors[1]);
        assert_eq!(m.predict(&sv(&[(0, 1.0)])).unwrap().0, 0);
        let p = m.predict_proba(&sv(&[])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nb_rejects_empty_class() {
        assert!(matches!(train_nb(&[sv(&[(0, 1.0)])], &[0], 2, 1), Err(Error::Fit(_))));
    }

    #[test]
    fn nb_empty_document_follows_priors() {
        let x = [sv(&[(0, 1.0)]), sv(&[(0, 1.0)]), sv(&[(1, 1.0)])];
        let m = train_nb(&x, &[1, 1, 0], 2, 2).unwrap();
        assert_eq!(m.predict(&sv(&[])).unwrap().0, 1);
    }

    #[test]
    fn zero_logreg_follows_bias() {
        let mut m = LogRegModel::zeros(3, 4, 0.0);
        m.bias = vec![0.1, 0.7, 0.7];
        let (c, p) = m.predict(&sv(&[(2, 1.0)])).unwrap();
        assert_eq!(c, 1);
        assert_eq!(p.len(), 3);
        assert!(m.predict(&sv(&[(4, 1.0)])).is_err());
    }

    #[test]
    fn logreg_separates_toy_set() {
        let x: Vec<SparseVector> = (0..40).map(|i| sv(&[(i % 2, 1.0), (2, 0.3)])).collect();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let m = train_logreg(&x, &y, 2, 3, &LogRegConfig::default()).unwrap();
        let correct = x.iter().zip(&y).filter(|(x, &y)| m.predict(x).unwrap().0 == y).count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn stronger_l2_shrinks_weights() {
        let x: Vec<SparseVector> = (0..30).map(|i| sv(&[(i % 3, 1.0)])).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let mut prev = f64::INFINITY;
        for l2 in [0.0, 0.01, 0.1, 1.0] {
            let cfg = LogRegConfig { l2, ..LogRegConfig::default() };
            let n = train_logreg(&x, &y, 3, 3, &cfg).unwrap().weight_norm();
            assert!(n < prev, "l2 {l2}: {n} >= {prev}");
            prev = n;
        }
    }

    #[test]
    fn grid_search_is_seeded() {
        let x: Vec<SparseVector> = (0..30).map(|i| sv(&[(i % 3, 1.0), (3, (i % 5) as f64 * 0.1)])).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let base = LogRegConfig {
            epochs: 5,
            ..LogRegConfig::default()
        };
        let grid = SearchGrid {
            lr: vec![0.1, 1.0],
            l2: vec![0.0, 0.01],
            folds: 3,
        };
        let a = grid_search(&x, &y, 3, 4, &base, &grid).unwrap();
        let b = grid_search(&x, &y, 3, 4, &base, &grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 4);
    }
}
