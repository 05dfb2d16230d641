use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

use super::tokenize;

/// Sparse vector as `(term index, value)` pairs in ascending index order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |p| self.entries[p].1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Raw term counts of one document, same layout as [`SparseVector`].
pub type TermCounts = SparseVector;

/// Smoothed inverse document frequencies: `idf(t) = ln((1+N)/(1+df(t))) + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdfTable {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    num_docs: usize,
}

impl IdfTable {
    /// Term indices follow lexicographic order of the training terms.
    pub fn fit(train: &Corpus) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Vocab("cannot fit TF-IDF on an empty corpus".into()));
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for s in train.samples() {
            let unique: BTreeSet<&str> = tokenize(train.text_of(s)).into_iter().collect();
            for t in unique {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let n = train.len() as f64;
        let mut terms = Vec::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (t, d) in df {
            terms.push(t.to_string());
            idf.push(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0);
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(IdfTable {
            terms,
            index,
            idf,
            num_docs: train.len(),
        })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_index(term).map(|i| self.idf[i])
    }

    /// Counts of known terms; unseen terms are dropped.
    pub fn counts(&self, text: &str) -> TermCounts {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokenize(text) {
            if let Some(i) = self.term_index(t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        SparseVector {
            entries: counts.into_iter().collect(),
        }
    }

    /// `count * idf`, L2-normalized. Documents without known terms map to the zero vector.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut v = self.counts(text);
        for (i, w) in &mut v.entries {
            *w *= self.idf[*i];
        }
        let norm = v.norm();
        if norm > 0.0 {
            for (_, w) in &mut v.entries {
                *w /= norm;
            }
        }
        v
    }

    /// `doc_id,term_index,weight` triples.
    pub fn write_matrix<W: Write>(docs: &[(u64, SparseVector)], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["doc_id", "term_index", "weight"])?;
        for (id, v) in docs {
            for (i, x) in &v.entries {
                w.write_record([id.to_string(), i.to_string(), format!("{x}")])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Term list, one per line in index order.
    pub fn write_terms<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.terms {
            writeln!(w, "{t}").map_err(|e| Error::io("<terms writer>", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{stratified_split, LabelSet, Sample, SplitSpec};

    fn corpus(texts: &[&str]) -> Corpus {
        let samples = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sample {
                id: i as u64,
                raw_text: t.to_string(),
                clean_text: String::new(),
                label: i % 2,
            })
            .collect();
        Corpus::new(LabelSet::default(), samples, false)
            .unwrap()
            .cleaned(None)
    }

    #[test]
    fn smoothed_idf_values() {
        let t = IdfTable::fit(&corpus(&["a b", "a c"])).unwrap();
        assert!((t.idf("a").unwrap() - 1.0).abs() < 1e-15);
        assert!((t.idf("b").unwrap() - 1.405_465_108_108_164).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_document_vector() {
        let t = IdfTable::fit(&corpus(&["a b", "a c"])).unwrap();
        let v = t.transform("a b");
        let idf_b = (1.5f64).ln() + 1.0;
        let norm = (1.0 + idf_b * idf_b).sqrt();
        assert!((v.get(t.term_index("a").unwrap()) - 1.0 / norm).abs() < 1e-12);
        assert!((v.get(t.term_index("b").unwrap()) - idf_b / norm).abs() < 1e-12);
        assert!((v.get(0) - 0.5797).abs() < 1e-4);
        assert!((v.get(1) - 0.8148).abs() < 1e-4);
    }

    #[test]
    fn degenerate_documents() {
        let t = IdfTable::fit(&corpus(&["a b", "a c"])).unwrap();
        assert!(t.transform("zzz qqq").is_empty());
        let single = t.transform("c");
        assert_eq!(single.entries.len(), 1);
        assert!((single.entries[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fit_only_sees_training_split() {
        let texts: Vec<String> = (0..40).map(|i| format!("w{} common", i % 13)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let c = corpus(&refs);
        let (train, test) = stratified_split(&c, &SplitSpec::default()).unwrap();
        let fitted = IdfTable::fit(&train).unwrap();
        let refit = IdfTable::fit(&train.subset(&(0..train.len()).collect::<Vec<_>>())).unwrap();
        assert_eq!(fitted, refit);
        assert_eq!(fitted.num_docs(), train.len());
        assert_ne!(fitted, IdfTable::fit(&test).unwrap());
    }

    #[test]
    fn matrix_export() {
        let t = IdfTable::fit(&corpus(&["a", "b"])).unwrap();
        let mut buf = Vec::new();
        IdfTable::write_matrix(&[(9, t.transform("b"))], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "doc_id,term_index,weight\n9,1,1\n");
    }
}
