use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub k_folds: Option<usize>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            k_folds: None,
            seed: 42,
        }
    }
}

/// Per-class sizes of a `fraction` share, rounded with the largest-remainder
/// method so they sum to `round(fraction * total)`. Ties go to the lower class.
pub fn proportional_quotas(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(quotas.iter().sum());
    for &c in &order {
        if missing == 0 {
            break;
        }
        if quotas[c] < counts[c] {
            quotas[c] += 1;
            missing -= 1;
        }
    }
    quotas
}

/// Positions of each class, each list shuffled by one seeded stream.
fn shuffled_by_class(labels: &[usize], num_classes: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    by_class
}

/// Stratified train/test split. Both parts keep the original sample order.
pub fn stratified_split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let counts = corpus.class_counts();
    for (c, &n) in counts.iter().enumerate() {
        if n == 1 {
            return Err(Error::Stratification {
                class: corpus.labels().name(c).to_string(),
                count: n,
                needed: 2,
            });
        }
    }
    let quotas = proportional_quotas(&counts, spec.test_fraction);
    let by_class = shuffled_by_class(&corpus.label_indices(), counts.len(), spec.seed);
    let mut in_test = vec![false; corpus.len()];
    for (members, &q) in by_class.iter().zip(&quotas) {
        for &i in &members[..q] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in corpus.samples().iter().enumerate() {
        if in_test[i] {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((corpus.with_samples(train), corpus.with_samples(test)))
}

/// Fold index for every position; per-class fold sizes differ by at most one
/// and the round-robin offset carries across classes so overall fold sizes
/// stay balanced too.
pub fn stratified_fold_assignment(
    labels: &[usize],
    num_classes: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let by_class = shuffled_by_class(labels, num_classes, seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for members in &by_class {
        for &i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

/// Stratified k-fold partition into `(train, validation)` pairs.
pub fn kfold(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<(Corpus, Corpus)>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    for (c, &n) in corpus.class_counts().iter().enumerate() {
        if n > 0 && n < k {
            return Err(Error::Fold {
                class: corpus.labels().name(c).to_string(),
                count: n,
                k,
            });
        }
    }
    let fold = stratified_fold_assignment(&corpus.label_indices(), corpus.num_classes(), k, seed)?;
    Ok((0..k)
        .map(|f| {
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (i, s) in corpus.samples().iter().enumerate() {
                if fold[i] == f {
                    val.push(s.clone());
                } else {
                    train.push(s.clone());
                }
            }
            (corpus.with_samples(train), corpus.with_samples(val))
        })
        .collect())
}

/// Randomly drops samples so every present class has the minority count.
pub fn undersample_to_min(corpus: &Corpus, seed: u64) -> Corpus {
    let counts = corpus.class_counts();
    let Some(min) = counts.iter().copied().filter(|&c| c > 0).min() else {
        return corpus.clone();
    };
    let by_class = shuffled_by_class(&corpus.label_indices(), counts.len(), seed);
    let mut keep = vec![false; corpus.len()];
    for members in &by_class {
        for &i in members.iter().take(min) {
            keep[i] = true;
        }
    }
    let samples = corpus
        .samples()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.clone())
        .collect();
    corpus.with_samples(samples)
}

/// Duplicates randomly chosen samples (with fresh ids) until every present
/// class has the majority count.
pub fn oversample_to_max(corpus: &Corpus, seed: u64) -> Corpus {
    let counts = corpus.class_counts();
    let max = counts.iter().copied().max().unwrap_or(0);
    let by_class = shuffled_by_class(&corpus.label_indices(), counts.len(), seed);
    let mut next_id = corpus.samples().iter().map(|s| s.id).max().map_or(0, |m| m + 1);
    let mut samples: Vec<Sample> = corpus.samples().to_vec();
    for members in &by_class {
        if members.is_empty() {
            continue;
        }
        for j in 0..max - members.len() {
            let src = &corpus.samples()[members[j % members.len()]];
            samples.push(Sample {
                id: next_id,
                ..src.clone()
            });
            next_id += 1;
        }
    }
    corpus.with_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSet;
    use std::collections::BTreeSet;

    fn corpus_with(counts: &[usize]) -> Corpus {
        let names: Vec<String> = (0..counts.len()).map(|i| format!("c{i}")).collect();
        let mut samples = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let id = samples.len() as u64;
                samples.push(Sample {
                    id,
                    raw_text: format!("text {id}"),
                    clean_text: String::new(),
                    label,
                });
            }
        }
        Corpus::new(LabelSet::new(names).unwrap(), samples, false).unwrap()
    }

    fn ids(c: &Corpus) -> BTreeSet<u64> {
        c.samples().iter().map(|s| s.id).collect()
    }

    #[test]
    fn split_70_30() {
        let c = corpus_with(&[70, 30]);
        let spec = SplitSpec {
            test_fraction: 0.2,
            k_folds: None,
            seed: 1,
        };
        let (train, test) = stratified_split(&c, &spec).unwrap();
        assert_eq!(test.class_counts(), vec![14, 6]);
        assert_eq!(train.class_counts(), vec![56, 24]);
    }

    #[test]
    fn split_half_of_two_two() {
        let c = corpus_with(&[2, 2]);
        let spec = SplitSpec {
            test_fraction: 0.5,
            k_folds: None,
            seed: 3,
        };
        let (train, test) = stratified_split(&c, &spec).unwrap();
        assert_eq!(train.class_counts(), vec![1, 1]);
        assert_eq!(test.class_counts(), vec![1, 1]);
    }

    #[test]
    fn split_is_seeded() {
        let c = corpus_with(&[40, 25, 9]);
        let spec = SplitSpec::default();
        let a = stratified_split(&c, &spec).unwrap();
        let b = stratified_split(&c, &spec).unwrap();
        assert_eq!(ids(&a.1), ids(&b.1));
        let other = stratified_split(&c, &SplitSpec { seed: 99, ..spec }).unwrap();
        assert_ne!(ids(&a.1), ids(&other.1));
    }

    #[test]
    fn singleton_class_cannot_be_split() {
        let c = corpus_with(&[5, 1]);
        let err = stratified_split(&c, &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Stratification { ref class, .. } if class == "c1"));
    }

    #[test]
    fn largest_remainder_is_exact() {
        assert_eq!(proportional_quotas(&[70, 30], 0.2), vec![14, 6]);
        // 0.25 * [3, 3, 3] = 0.75 each, target round(2.25) = 2
        assert_eq!(proportional_quotas(&[3, 3, 3], 0.25), vec![1, 1, 0]);
    }

    #[test]
    fn kfold_exact_division() {
        let c = corpus_with(&[30, 30]);
        let folds = kfold(&c, 3, 5).unwrap();
        assert_eq!(folds.len(), 3);
        for (train, val) in &folds {
            assert_eq!(val.class_counts(), vec![10, 10]);
            assert_eq!(train.len(), 40);
        }
    }

    #[test]
    fn kfold_two_on_two_two() {
        let c = corpus_with(&[2, 2]);
        for (_, val) in kfold(&c, 2, 0).unwrap() {
            assert_eq!(val.class_counts(), vec![1, 1]);
        }
    }

    #[test]
    fn kfold_rejects_small_class() {
        let c = corpus_with(&[10, 3]);
        assert!(matches!(kfold(&c, 5, 0), Err(Error::Fold { k: 5, count: 3, .. })));
    }

    #[test]
    fn kfold_validation_folds_partition_corpus() {
        let c = corpus_with(&[17, 11, 8]);
        let folds = kfold(&c, 4, 9).unwrap();
        let mut seen = Vec::new();
        for (train, val) in &folds {
            assert!(ids(train).is_disjoint(&ids(val)));
            assert_eq!(train.len() + val.len(), c.len());
            seen.extend(ids(val));
        }
        seen.sort();
        assert_eq!(seen, ids(&c).into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn resampling_balances_classes() {
        let c = corpus_with(&[9, 4, 2]);
        assert_eq!(undersample_to_min(&c, 1).class_counts(), vec![2, 2, 2]);
        let over = oversample_to_max(&c, 1);
        assert_eq!(over.class_counts(), vec![9, 9, 9]);
        assert_eq!(ids(&over).len(), over.len());
    }
}
