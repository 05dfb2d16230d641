use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Whitespace tokenizer over cleaned text.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Token <-> index map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from explicit tokens (specials are prepended).
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    /// Tokens seen at least `min_freq` times in `train`, ordered by descending
    /// frequency then lexicographically.
    pub fn build(train: &Corpus, min_freq: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Vocab("training corpus is empty".into()));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in train.samples() {
            for t in tokenize(train.text_of(s)) {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            freq.into_iter().filter(|&(_, n)| n >= min_freq).collect();
        if kept.is_empty() {
            return Err(Error::Vocab(format!(
                "no token reaches min_freq = {min_freq}"
            )));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    /// Size including the two specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    /// Non-special tokens, one per line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens[2..] {
            writeln!(w, "{t}").map_err(|e| Error::io("<vocab writer>", e))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<vocab reader>", e))?;
            if !line.is_empty() {
                tokens.push(line);
            }
        }
        Self::from_tokens(tokens)
    }

    /// Hex SHA-256 of the exported token list.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens[2..] {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Padded index sequence for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub id: u64,
    pub indices: Vec<usize>,
    /// Number of real tokens before padding (after truncation).
    pub length: usize,
}

impl TokenSequence {
    /// Tokens of the unpadded prefix, `<unk>` for out-of-vocabulary entries.
    pub fn decode(&self, vocab: &Vocabulary) -> String {
        self.indices[..self.length]
            .iter()
            .map(|&i| vocab.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Maps tokens to indices (unknown -> `UNK`), truncates to `max_len` and
/// right-pads with `PAD`.
pub fn encode(id: u64, text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut indices: Vec<usize> = tokenize(text)
        .into_iter()
        .take(max_len)
        .map(|t| vocab.get(t).unwrap_or(UNK))
        .collect();
    let length = indices.len();
    indices.resize(max_len, PAD);
    TokenSequence {
        id,
        indices,
        length,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSet, Sample};
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Corpus {
        let samples = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sample {
                id: i as u64,
                raw_text: t.to_string(),
                clean_text: String::new(),
                label: 0,
            })
            .collect();
        Corpus::new(LabelSet::default(), samples, false)
            .unwrap()
            .cleaned(None)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("i feel sad"), vec!["i", "feel", "sad"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b"), vec!["a", "b"]);
    }

    #[test]
    fn min_freq_filters() {
        let c = corpus(&["a a b", "a"]);
        let v = Vocabulary::build(&c, 2).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("a"), Some(2));
        assert_eq!(v.get("b"), None);
        assert_eq!(Vocabulary::build(&c, 1).unwrap().len(), 4);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocabulary::build(&corpus(&["b a"]), 1).unwrap();
        assert_eq!(v.get("a"), Some(2));
        assert_eq!(v.get("b"), Some(3));
    }

    #[test]
    fn empty_after_filter_is_error() {
        assert!(matches!(
            Vocabulary::build(&corpus(&["a b"]), 5),
            Err(Error::Vocab(_))
        ));
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_tokens(["a"]).unwrap();
        let s = encode(0, "a b", &v, 4);
        assert_eq!(s.indices, vec![2, UNK, PAD, PAD]);
        assert_eq!(s.length, 2);

        let s = encode(0, "a a a", &v, 1);
        assert_eq!((s.indices.len(), s.length), (1, 1));

        let s = encode(0, "", &v, 3);
        assert_eq!((s.indices, s.length), (vec![PAD; 3], 0));
    }

    #[test]
    fn text_export_round_trip() {
        let v = Vocabulary::build(&corpus(&["x y y z z z"]), 1).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "z\ny\nx\n");
        assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), v);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec(0usize..6, 0..8)) {
            let names = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];
            let v = Vocabulary::from_tokens(names).unwrap();
            let text = words.iter().map(|&w| names[w]).collect::<Vec<_>>().join(" ");
            let seq = encode(1, &text, &v, 8);
            prop_assert_eq!(seq.decode(&v), text);
            prop_assert!(seq.indices.iter().all(|&i| i < v.len()));
        }
    }
}
