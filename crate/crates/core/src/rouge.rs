//! ROUGE-1, ROUGE-2 and ROUGE-L.
//!
//! Scores are computed over [`TokenSequence`]s produced by [`normalize`]:
//! lowercased alphanumeric word tokens with optional Porter stemming and
//! stopword removal. ROUGE-N uses clipped (multiset) n-gram matching and
//! ROUGE-L is the sentence-level longest-common-subsequence variant.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// English function words. Used for optional stopword removal and by the
/// content-word query mask in [`crate::relevance`].
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Ordered, normalized word tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSequence(tokens)
    }

    /// Splits on whitespace without further normalization.
    pub fn from_words(text: &str) -> Self {
        TokenSequence(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl From<Vec<&str>> for TokenSequence {
    fn from(v: Vec<&str>) -> Self {
        TokenSequence(v.into_iter().map(str::to_owned).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "1")]
    Rouge1,
    #[serde(rename = "2")]
    Rouge2,
    #[serde(rename = "L")]
    RougeL,
}

impl RougeVariant {
    pub const ALL: [RougeVariant; 3] = [RougeVariant::Rouge1, RougeVariant::Rouge2, RougeVariant::RougeL];

    pub fn label(self) -> &'static str {
        match self {
            RougeVariant::Rouge1 => "R-1",
            RougeVariant::Rouge2 => "R-2",
            RougeVariant::RougeL => "R-L",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeConfig {
    pub use_stemming: bool,
    pub stopword_removal: bool,
    pub variants: Vec<RougeVariant>,
}

impl Default for RougeConfig {
    fn default() -> Self {
        RougeConfig {
            use_stemming: true,
            stopword_removal: false,
            variants: RougeVariant::ALL.to_vec(),
        }
    }
}

impl RougeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::invalid("rouge config enables no variants"));
        }
        Ok(())
    }

    /// Config used for model-facing tokens: same splitting, no stemming.
    pub fn plain() -> Self {
        RougeConfig {
            use_stemming: false,
            ..RougeConfig::default()
        }
    }
}

/// Lowercases, strips punctuation, splits on whitespace and optionally stems
/// and removes stopwords. Tokens of four characters or fewer are never
/// stemmed.
pub fn normalize(text: &str, config: &RougeConfig) -> TokenSequence {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let tokens = cleaned
        .split_whitespace()
        .filter(|t| !(config.stopword_removal && is_stopword(t)))
        .map(|t| {
            if config.use_stemming && t.chars().count() > 3 && t.is_ascii() {
                porter_stemmer::stem(t)
            } else {
                t.to_owned()
            }
        })
        .collect();
    TokenSequence(tokens)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore { precision, recall, f1 }
    }

    fn from_counts(matches: usize, candidate_total: usize, reference_total: usize) -> Self {
        if candidate_total == 0 || reference_total == 0 {
            return RougeScore::ZERO;
        }
        RougeScore::from_pr(
            matches as f64 / candidate_total as f64,
            matches as f64 / reference_total as f64,
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap. `n` must be at least 1.
pub fn rouge_n(candidate: &TokenSequence, reference: &TokenSequence, n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::invalid("rouge_n requires n >= 1"));
    }
    let cand = ngram_counts(&candidate.0, n);
    let refc = ngram_counts(&reference.0, n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refc.values().sum();
    let matches: usize = cand
        .iter()
        .map(|(gram, &c)| refc.get(gram).map_or(0, |&r| c.min(r)))
        .sum();
    Ok(RougeScore::from_counts(matches, cand_total, ref_total))
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> RougeScore {
    let lcs = lcs_length(&candidate.0, &reference.0);
    RougeScore::from_counts(lcs, candidate.len(), reference.len())
}

pub fn score_variant(candidate: &TokenSequence, reference: &TokenSequence, variant: RougeVariant) -> RougeScore {
    match variant {
        RougeVariant::Rouge1 => rouge_n(candidate, reference, 1).expect("n >= 1"),
        RougeVariant::Rouge2 => rouge_n(candidate, reference, 2).expect("n >= 1"),
        RougeVariant::RougeL => rouge_l(candidate, reference),
    }
}

/// Per-variant scores for one candidate/reference pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub scores: Vec<(RougeVariant, RougeScore)>,
}

impl RougeReport {
    pub fn get(&self, variant: RougeVariant) -> Option<RougeScore> {
        self.scores.iter().find(|(v, _)| *v == variant).map(|(_, s)| *s)
    }

    pub fn f1(&self, variant: RougeVariant) -> f64 {
        self.get(variant).map_or(0.0, |s| s.f1)
    }

    pub fn mean_f1(&self) -> Result<f64> {
        let s: Vec<RougeScore> = self.scores.iter().map(|(_, s)| *s).collect();
        mean_rouge(&s)
    }
}

/// Scores `candidate` against `reference` on raw text for every enabled variant.
pub fn evaluate(candidate: &str, reference: &str, config: &RougeConfig) -> RougeReport {
    let c = normalize(candidate, config);
    let r = normalize(reference, config);
    evaluate_tokens(&c, &r, config)
}

pub fn evaluate_tokens(candidate: &TokenSequence, reference: &TokenSequence, config: &RougeConfig) -> RougeReport {
    RougeReport {
        scores: config
            .variants
            .iter()
            .map(|&v| (v, score_variant(candidate, reference, v)))
            .collect(),
    }
}

/// Arithmetic mean of F1 across the given variant scores.
pub fn mean_rouge(scores: &[RougeScore]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("mean_rouge over an empty score set"));
    }
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}
