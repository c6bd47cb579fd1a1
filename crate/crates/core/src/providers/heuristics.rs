//! Reference scorers for the toy and file backends.
//!
//! - personalization: Jaccard overlap of style markers, i.e. words outside a
//!   built-in list of the 1000 most common English words;
//! - contradiction: overlap of non-common content words (negations removed)
//!   times a negation-asymmetry indicator;
//! - implicit: cosine of the two post embeddings rescaled to `[0, 1]`.

use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use super::{EmbeddingMatrix, ScoreKind};
use crate::error::{Error, Result};
use crate::graph::cosine_sim;

const COMMON_WORDS: &str = include_str!("common_words.txt");

const NEGATIONS: [&str; 6] = ["no", "not", "never", "n't", "cannot", "without"];

fn common_words() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| COMMON_WORDS.lines().filter(|l| !l.is_empty()).collect())
}

pub fn is_common(word: &str) -> bool {
    common_words().contains(word)
}

/// Lowercased words; apostrophes inside a word are kept so contractions such
/// as `don't` stay whole.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace('\u{2019}', "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn is_negation(word: &str) -> bool {
    NEGATIONS.contains(&word) || word.ends_with("n't")
}

pub fn style_markers(text: &str) -> BTreeSet<String> {
    words(text).into_iter().filter(|w| !is_common(w)).collect()
}

fn content_words(text: &str) -> BTreeSet<String> {
    words(text)
        .into_iter()
        .filter(|w| !is_common(w) && !is_negation(w))
        .collect()
}

fn has_negation(text: &str) -> bool {
    words(text).iter().any(|w| is_negation(w))
}

/// Jaccard index; two empty sets score 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn non_blank(a: &str, b: &str) -> Result<()> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(Error::EmptyInput("cannot score a blank post".into()));
    }
    Ok(())
}

pub fn score_personalization(a: &str, b: &str) -> Result<f64> {
    non_blank(a, b)?;
    Ok(jaccard(&style_markers(a), &style_markers(b)))
}

pub fn score_contradiction(a: &str, b: &str) -> Result<f64> {
    non_blank(a, b)?;
    if has_negation(a) == has_negation(b) {
        return Ok(0.0);
    }
    Ok(jaccard(&content_words(a), &content_words(b)))
}

/// `(cos(a, b) + 1) / 2`.
pub fn score_implicit_embeddings(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok((cosine_sim(a, b)? + 1.0) / 2.0)
}

pub(crate) fn score_pairs(
    kind: ScoreKind,
    pairs: &[(usize, usize)],
    posts: &[String],
    embeddings: &EmbeddingMatrix,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(i, j)| {
            let s = match kind {
                ScoreKind::Personalization => score_personalization(&posts[i], &posts[j]),
                ScoreKind::Contradiction => score_contradiction(&posts[i], &posts[j]),
                ScoreKind::Implicit => {
                    non_blank(&posts[i], &posts[j])?;
                    score_implicit_embeddings(embeddings.row(i), embeddings.row(j))
                }
            };
            s.map_err(|e| e.context(format!("{} pair ({i},{j})", kind.as_str())))
        })
        .collect()
}
