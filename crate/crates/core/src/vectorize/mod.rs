//! Tokenization, vocabularies, padded index sequences and TF-IDF vectors.

mod tfidf;
mod vocab;

pub use tfidf::{IdfTable, SparseVector, TermCounts};
pub use vocab::{encode, tokenize, TokenSequence, Vocabulary, PAD, UNK};

/// Default padded sequence length.
pub const DEFAULT_MAX_LEN: usize = 64;
/// Default minimum token frequency for the neural vocabulary.
pub const DEFAULT_MIN_FREQ: usize = 2;
