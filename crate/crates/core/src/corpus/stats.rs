use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::Corpus;
use crate::error::{Error, Result};

/// Class distribution and word-count histogram of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    /// `(label name, count)` in label-index order.
    pub class_counts: Vec<(String, usize)>,
    /// word count -> number of samples with exactly that many words.
    pub length_hist: BTreeMap<usize, usize>,
}

pub fn stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::Stats("corpus is empty".into()));
    }
    let class_counts = corpus
        .class_counts()
        .into_iter()
        .enumerate()
        .map(|(i, n)| (corpus.labels().name(i).to_string(), n))
        .collect();
    let mut length_hist = BTreeMap::new();
    for s in corpus.samples() {
        let words = corpus.text_of(s).split_whitespace().count();
        *length_hist.entry(words).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        class_counts,
        length_hist,
    })
}

impl CorpusStats {
    /// `label,count` rows.
    pub fn write_class_counts<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["label", "count"])?;
        for (label, n) in &self.class_counts {
            w.write_record([label.as_str(), n.to_string().as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// `word_count,count` rows, ascending word count.
    pub fn write_length_hist<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["word_count", "count"])?;
        for (len, n) in &self.length_hist {
            w.write_record([len.to_string(), n.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}
