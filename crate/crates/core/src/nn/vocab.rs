use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rouge::{normalize, RougeConfig};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const UNK: usize = 5;
/// Type token prefixed to dual-encoder query inputs.
pub const QRY: usize = 6;
/// Type token prefixed to dual-encoder passage inputs.
pub const PSG: usize = 7;

pub const RESERVED: [&str; 8] = ["[PAD]", "[BOS]", "[EOS]", "[SEP]", "[MASK]", "[UNK]", "[QRY]", "[PSG]"];

/// Splits text into model words: lowercase alphanumeric runs, with literal
/// `[MASK]` markers kept as a single token.
pub fn tokenize(text: &str) -> Vec<String> {
    let plain = RougeConfig::plain();
    let mut out = Vec::new();
    for (i, piece) in text.split(RESERVED[MASK]).enumerate() {
        if i > 0 {
            out.push(RESERVED[MASK].to_owned());
        }
        out.extend(normalize(piece, &plain).0);
    }
    out
}

/// Deterministic word-level vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Reserved tokens followed by words with count ≥ `min_count`, most
    /// frequent first, ties broken lexicographically.
    pub fn build<'a, I, S>(texts: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<str> + 'a + ?Sized,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in tokenize(t.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !RESERVED.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(words.len()));
        words.extend(ranked.into_iter().take(room).map(|(w, _)| w));
        Vocab::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.encode_words(&tokenize(text))
    }

    /// Words for ids, dropping reserved tokens other than UNK and MASK.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS | SEP | QRY | PSG))
            .filter_map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks that the reserved prefix is intact.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in RESERVED.iter().enumerate() {
            if self.words.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Format(format!("vocabulary slot {i} must be {r}")));
            }
        }
        if self.index.len() != self.words.len() {
            return Err(Error::Format("vocabulary contains duplicate words".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_orders_by_frequency_then_word() {
        let v = Vocab::build(["b a c", "a b", "a z"].iter(), 1, None);
        assert_eq!(v.word(8), Some("a"));
        assert_eq!(v.word(9), Some("b"));
        assert_eq!(v.word(10), Some("c"));
        assert_eq!(v.word(11), Some("z"));
        assert_eq!(v.id("missing"), UNK);
        v.validate().unwrap();
    }

    #[test]
    fn mask_marker_survives_tokenization() {
        let v = Vocab::build(["what about [MASK] today"].iter(), 1, None);
        assert_eq!(tokenize("What about [MASK]?"), vec!["what", "about", "[MASK]"]);
        assert_eq!(v.encode("[MASK] today")[0], MASK);
        assert_eq!(v.decode(&[BOS, v.id("today"), EOS]), "today");
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::build(["x y"].iter(), 1, Some(9));
        assert_eq!(v.len(), 9);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&s).unwrap(), v);
    }
}
