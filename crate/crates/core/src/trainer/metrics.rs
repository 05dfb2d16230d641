use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Classification metrics. Ratios with a zero denominator are reported as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_digest: String,
    pub total: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    /// Weighted by true-class support; the headline average.
    pub weighted_avg: Averages,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], labels: &[String]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Contract("cannot compute metrics on an empty set".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        let k = labels.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::Contract(format!("class index outside {k} labels")));
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion, labels))
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>, labels: &[String]) -> Self {
        let k = labels.len();
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    label: labels[c].clone(),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let avg = |w: &dyn Fn(&ClassMetrics) -> f64, norm: f64| Averages {
            precision: per_class.iter().map(|m| w(m) * m.precision).sum::<f64>() / norm,
            recall: per_class.iter().map(|m| w(m) * m.recall).sum::<f64>() / norm,
            f1: per_class.iter().map(|m| w(m) * m.f1).sum::<f64>() / norm,
        };
        let macro_avg = avg(&|_| 1.0, k as f64);
        let weighted_avg = avg(&|m| m.support as f64, total.max(1) as f64);
        MetricsReport {
            config_digest: String::new(),
            total,
            accuracy: ratio(trace, total),
            per_class,
            macro_avg,
            weighted_avg,
            confusion,
        }
    }

    pub fn with_digest(mut self, digest: &str) -> Self {
        self.config_digest = digest.to_string();
        self
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// `K × K` integers, one row per true class in label order.
    pub fn write_confusion(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for row in &self.confusion {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Named scalar summaries used for k-fold aggregation.
    pub fn scalars(&self) -> [(&'static str, f64); 7] {
        [
            ("accuracy", self.accuracy),
            ("macro_precision", self.macro_avg.precision),
            ("macro_recall", self.macro_avg.recall),
            ("macro_f1", self.macro_avg.f1),
            ("weighted_precision", self.weighted_avg.precision),
            ("weighted_recall", self.weighted_avg.recall),
            ("weighted_f1", self.weighted_avg.f1),
        ]
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
