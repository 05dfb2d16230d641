//! Labeled text corpora: CSV ingestion, cleaning, augmentation, stratified
//! splitting and summary statistics.

mod clean;
mod split;
mod stats;

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::{clean_text, remove_stopwords};
pub use split::{
    kfold, oversample_to_max, proportional_quotas, stratified_fold_assignment, stratified_split,
    undersample_to_min, SplitSpec,
};
pub use stats::{stats, CorpusStats};

/// Class names of the seven-way mental health task, in index order.
pub const DEFAULT_LABELS: [&str; 7] = [
    "Normal",
    "Depression",
    "Suicidal",
    "Anxiety",
    "Stress",
    "Bipolar",
    "Personal Disorder",
];

/// Ordered, duplicate-free set of class names. Index `i` is class `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet {
            names: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "label set needs at least 2 classes, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Config(format!("duplicate label {n:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One labeled statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: u64,
    pub raw_text: String,
    /// Empty until the corpus is cleaned.
    pub clean_text: String,
    pub label: usize,
}

/// Column names of an input CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            text: "statement".into(),
            label: "status".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    labels: LabelSet,
    samples: Vec<Sample>,
    cleaned: bool,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and label range.
    pub fn new(labels: LabelSet, samples: Vec<Sample>, cleaned: bool) -> Result<Self> {
        let mut ids = HashSet::with_capacity(samples.len());
        for (row, s) in samples.iter().enumerate() {
            if !ids.insert(s.id) {
                return Err(Error::DuplicateId { id: s.id, row: row + 1 });
            }
            if s.label >= labels.len() {
                return Err(Error::UnknownLabel {
                    row: row + 1,
                    label: s.label.to_string(),
                });
            }
        }
        Ok(Corpus {
            labels,
            samples,
            cleaned,
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_cleaned(&self) -> bool {
        self.cleaned
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Text used downstream: the cleaned text once cleaned, the raw text before.
    pub fn text_of<'a>(&self, sample: &'a Sample) -> &'a str {
        if self.cleaned {
            &sample.clean_text
        } else {
            &sample.raw_text
        }
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Same label set, subset of samples selected by position (order kept).
    pub fn subset(&self, positions: &[usize]) -> Corpus {
        Corpus {
            labels: self.labels.clone(),
            samples: positions.iter().map(|&i| self.samples[i].clone()).collect(),
            cleaned: self.cleaned,
        }
    }

    pub(crate) fn with_samples(&self, samples: Vec<Sample>) -> Corpus {
        Corpus {
            labels: self.labels.clone(),
            samples,
            cleaned: self.cleaned,
        }
    }

    /// Applies [`clean_text`] to every sample, optionally followed by stopword removal.
    pub fn cleaned(&self, stopwords: Option<&BTreeSet<String>>) -> Corpus {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut clean = clean_text(&s.raw_text);
                if let Some(stop) = stopwords {
                    clean = remove_stopwords(&clean, stop);
                }
                Sample {
                    clean_text: clean,
                    ..s.clone()
                }
            })
            .collect();
        Corpus {
            labels: self.labels.clone(),
            samples,
            cleaned: true,
        }
    }

    /// Reads an input CSV with a header row.
    pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, labels: &LabelSet) -> Result<Corpus> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
        };
        let id_col = column(&schema.id)?;
        let text_col = column(&schema.text)?;
        let label_col = column(&schema.label)?;

        let mut samples = Vec::new();
        let mut ids = HashSet::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record?;
            let field = |col: usize| record.get(col).unwrap_or("");
            let id_str = field(id_col).trim();
            let id: u64 = id_str
                .parse()
                .map_err(|_| Error::Schema(format!("row {row}: id {id_str:?} is not an integer")))?;
            let label_str = field(label_col).trim();
            let label = labels.index_of(label_str).ok_or_else(|| Error::UnknownLabel {
                row,
                label: label_str.to_string(),
            })?;
            if !ids.insert(id) {
                return Err(Error::DuplicateId { id, row });
            }
            samples.push(Sample {
                id,
                raw_text: field(text_col).to_string(),
                clean_text: String::new(),
                label,
            });
        }
        Ok(Corpus {
            labels: labels.clone(),
            samples,
            cleaned: false,
        })
    }

    pub fn load_csv(path: &Path, schema: &CsvSchema, labels: &LabelSet) -> Result<Corpus> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, schema, labels)
    }

    /// Writes the corpus with the configured column names (raw text only).
    pub fn write_csv<W: Write>(&self, writer: W, schema: &CsvSchema) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([&schema.id, &schema.text, &schema.label])?;
        for s in &self.samples {
            w.write_record([
                s.id.to_string().as_str(),
                s.raw_text.as_str(),
                self.labels.name(s.label),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Writes the cleaned-corpus file: `id,raw_text,clean_text,label`.
    pub fn write_cleaned<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "raw_text", "clean_text", "label"])?;
        for s in &self.samples {
            w.write_record([
                s.id.to_string().as_str(),
                s.raw_text.as_str(),
                s.clean_text.as_str(),
                self.labels.name(s.label),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_cleaned<R: Read>(reader: R, labels: &LabelSet) -> Result<Corpus> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["id", "raw_text", "clean_text", "label"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Schema(format!(
                "cleaned corpus header must be {expected:?}, got {headers:?}"
            )));
        }
        let mut samples = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let id: u64 = record[0]
                .parse()
                .map_err(|_| Error::Schema(format!("row {row}: bad id {:?}", &record[0])))?;
            let label = labels.index_of(&record[3]).ok_or_else(|| Error::UnknownLabel {
                row,
                label: record[3].to_string(),
            })?;
            samples.push(Sample {
                id,
                raw_text: record[1].to_string(),
                clean_text: record[2].to_string(),
                label,
            });
        }
        Corpus::new(labels.clone(), samples, true)
    }
}

/// Result of [`augment`].
#[derive(Clone, Debug)]
pub struct Augmented {
    pub corpus: Corpus,
    pub added: usize,
    /// Outputs that cleaned to empty text or duplicated an existing sample.
    pub suppressed: usize,
    /// Samples on which the hook returned an error.
    pub failed: usize,
}

/// Runs `hook` over every cleaned sample and appends one re-cleaned variant
/// per sample, labeled like its source and given a fresh id.
pub fn augment<F, E>(corpus: &Corpus, mut hook: F) -> Augmented
where
    F: FnMut(&str) -> std::result::Result<String, E>,
{
    let base = if corpus.is_cleaned() {
        corpus.clone()
    } else {
        corpus.cleaned(None)
    };
    let mut seen: HashSet<String> = base.samples.iter().map(|s| s.clean_text.clone()).collect();
    let mut next_id = base.samples.iter().map(|s| s.id).max().map_or(0, |m| m + 1);
    let mut extra = Vec::new();
    let (mut suppressed, mut failed) = (0, 0);
    for s in &base.samples {
        let produced = match hook(&s.clean_text) {
            Ok(t) => t,
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        let clean = clean_text(&produced);
        if clean.is_empty() || !seen.insert(clean.clone()) {
            suppressed += 1;
            continue;
        }
        extra.push(Sample {
            id: next_id,
            raw_text: produced,
            clean_text: clean,
            label: s.label,
        });
        next_id += 1;
    }
    let added = extra.len();
    let mut samples = base.samples;
    samples.extend(extra);
    Augmented {
        corpus: Corpus {
            labels: base.labels,
            samples,
            cleaned: true,
        },
        added,
        suppressed,
        failed,
    }
}
