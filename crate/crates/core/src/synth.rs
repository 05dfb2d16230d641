//! Seeded synthetic corpus with class-specific token profiles.
//!
//! Each class owns a block of [`BLOCK`] tokens; [`SHARED`] further tokens are
//! common to all classes. A word is drawn from the own block with probability
//! 0.5, from the shared pool with 0.4, and uniformly over the whole
//! vocabulary otherwise. Documents have 3 to 30 words.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, LabelSet, Sample};
use crate::error::{Error, Result};

pub const BLOCK: usize = 20;
pub const SHARED: usize = 60;
const P_OWN: f64 = 0.5;
const P_SHARED: f64 = 0.4;
const MIN_WORDS: usize = 3;
const MAX_WORDS: usize = 30;

pub fn token(i: usize) -> String {
    format!("w{i:03}")
}

/// Exact class sizes summing to `n`, falling linearly from 2 to 1 in weight.
pub fn class_sizes(n: usize, classes: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..classes)
        .map(|c| 2.0 - c as f64 / (classes - 1).max(1) as f64)
        .collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - sizes.iter().sum::<usize>();
    for &c in order.iter().take(missing) {
        sizes[c] += 1;
    }
    sizes
}

/// `n` documents over `labels`; ids are `0..n`, texts are already clean.
pub fn generate(n: usize, seed: u64, labels: &LabelSet) -> Result<Corpus> {
    let k = labels.len();
    if n < k {
        return Err(Error::Config(format!("need at least one document per class ({k}), got n = {n}")));
    }
    let vocab = k * BLOCK + SHARED;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = class_sizes(n, k)
        .into_iter()
        .enumerate()
        .flat_map(|(c, m)| std::iter::repeat_n(c, m))
        .collect();
    classes.shuffle(&mut rng);
    let samples = classes
        .into_iter()
        .enumerate()
        .map(|(id, c)| {
            let words = rng.random_range(MIN_WORDS..=MAX_WORDS);
            let text = (0..words)
                .map(|_| {
                    let u: f64 = rng.random();
                    let t = if u < P_OWN {
                        c * BLOCK + rng.random_range(0..BLOCK)
                    } else if u < P_OWN + P_SHARED {
                        k * BLOCK + rng.random_range(0..SHARED)
                    } else {
                        rng.random_range(0..vocab)
                    };
                    token(t)
                })
                .collect::<Vec<_>>()
                .join(" ");
            Sample {
                id: id as u64,
                raw_text: text.clone(),
                clean_text: text,
                label: c,
            }
        })
        .collect();
    Corpus::new(labels.clone(), samples, false)
}
