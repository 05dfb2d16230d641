use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

static BRACKETED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[[^\]]*\]").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S*").unwrap());
static HTML_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^>]*>").unwrap());

/// Normalizes a raw statement: lowercase, drop `[...]` spans, URLs, HTML tags,
/// punctuation and symbols, then collapse whitespace (newlines included).
///
/// The output holds only letters, digits and single inner spaces, and
/// `clean_text(clean_text(x)) == clean_text(x)`.
pub fn clean_text(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let s = BRACKETED.replace_all(&lower, " ");
    let s = URL.replace_all(&s, " ");
    let s = HTML_TAG.replace_all(&s, " ");

    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
        // everything else (punctuation, symbols, marks, controls) is dropped
    }
    out
}

/// Drops whitespace-separated tokens found in `stopwords`.
pub fn remove_stopwords(clean: &str, stopwords: &BTreeSet<String>) -> String {
    clean
        .split(' ')
        .filter(|t| !t.is_empty() && !stopwords.contains(*t))
        .collect::<Vec<_>>()
        .join(" ")
}
