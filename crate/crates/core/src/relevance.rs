//! Extractor supervision: ROUGE regression targets, binary positive/negative
//! labels, and pseudo-query masking.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QueryInstance;
use crate::error::{Error, Result};
use crate::rouge::{self, is_stopword, RougeConfig};
use crate::segmenter::Passage;

pub const DEFAULT_POSITIVES: usize = 1;
pub const DEFAULT_NEGATIVES: usize = 7;

pub const WH_WORDS: &[&str] = &["what", "who", "when", "where", "why", "how", "which"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceTarget {
    Score(f64),
    Label(BinaryLabel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceExample {
    pub query_id: String,
    pub query_text: String,
    pub passage_id: String,
    /// Position of the passage in the list it was built from.
    pub passage_index: usize,
    pub target: RelevanceTarget,
}

/// JSONL dump record: `{query_id, passage_id, target}` or `{query_id, passage_id, label}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub query_id: String,
    pub passage_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<BinaryLabel>,
}

impl From<&RelevanceExample> for RelevanceRecord {
    fn from(e: &RelevanceExample) -> Self {
        let (target, label) = match e.target {
            RelevanceTarget::Score(s) => (Some(s), None),
            RelevanceTarget::Label(l) => (None, Some(l)),
        };
        RelevanceRecord {
            query_id: e.query_id.clone(),
            passage_id: e.passage_id.clone(),
            target,
            label,
        }
    }
}

/// Mean F1 over the configured ROUGE variants between a passage and a summary.
pub fn relevance_score(passage_text: &str, summary: &str, config: &RougeConfig) -> f64 {
    rouge::evaluate(passage_text, summary, config).mean_f1().unwrap_or(0.0)
}

fn check_membership(instance: &QueryInstance, passages: &[Passage]) -> Result<()> {
    if let Some(p) = passages.iter().find(|p| p.meeting_id != instance.meeting_id) {
        return Err(Error::invalid(format!(
            "passage {} does not belong to meeting {}",
            p.passage_id, instance.meeting_id
        )));
    }
    Ok(())
}

/// One regression example per passage; the query is used unmasked.
pub fn regression_targets(
    instance: &QueryInstance,
    passages: &[Passage],
    config: &RougeConfig,
) -> Result<Vec<RelevanceExample>> {
    check_membership(instance, passages)?;
    Ok(passages
        .iter()
        .enumerate()
        .map(|(i, p)| RelevanceExample {
            query_id: instance.query_id.clone(),
            query_text: instance.query.clone(),
            passage_id: p.passage_id.clone(),
            passage_index: i,
            target: RelevanceTarget::Score(relevance_score(&p.text, &instance.reference_summary, config)),
        })
        .collect())
}

/// Indices of `scores` sorted by descending score, ties by ascending index.
pub fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Top-`k_pos` passages by regression target are positives; `n_neg` negatives
/// are drawn uniformly without replacement from the rest. The draw depends on
/// `seed` and the query id only.
pub fn binary_labels(
    instance: &QueryInstance,
    passages: &[Passage],
    k_pos: usize,
    n_neg: usize,
    seed: u64,
    config: &RougeConfig,
) -> Result<Vec<RelevanceExample>> {
    if k_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("binary_labels needs k_pos >= 1 and n_neg >= 1"));
    }
    if passages.len() < k_pos + n_neg {
        return Err(Error::invalid(format!(
            "query {}: {} passages, need {} positives + {} negatives",
            instance.query_id,
            passages.len(),
            k_pos,
            n_neg
        )));
    }
    let targets = regression_targets(instance, passages, config)?;
    let scores: Vec<f64> = targets
        .iter()
        .map(|t| match t.target {
            RelevanceTarget::Score(s) => s,
            RelevanceTarget::Label(_) => unreachable!(),
        })
        .collect();
    let order = argsort_desc(&scores);
    let mut rest: Vec<usize> = order[k_pos..].to_vec();
    rest.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&instance.query_id));
    let negatives: Vec<usize> = rest.choose_multiple(&mut rng, n_neg).copied().collect();

    let make = |i: usize, label| RelevanceExample {
        query_id: instance.query_id.clone(),
        query_text: instance.query.clone(),
        passage_id: passages[i].passage_id.clone(),
        passage_index: i,
        target: RelevanceTarget::Label(label),
    };
    Ok(order[..k_pos]
        .iter()
        .map(|&i| make(i, BinaryLabel::Positive))
        .chain(negatives.into_iter().map(|i| make(i, BinaryLabel::Negative)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    ContentWordMask,
    WhWordMask,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub mode: MaskMode,
    pub mask_token: String,
}

impl MaskingConfig {
    pub fn new(mode: MaskMode) -> Self {
        MaskingConfig {
            mode,
            mask_token: "[MASK]".to_owned(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != MaskMode::None && self.mask_token.is_empty() {
            return Err(Error::invalid("mask_token must be non-empty"));
        }
        Ok(())
    }
}

/// Replaces word runs selected by the mask mode with the mask token and keeps
/// every other character (spacing, punctuation) in place.
pub fn mask_query(text: &str, config: &MaskingConfig) -> String {
    if config.mode == MaskMode::None {
        return text.to_owned();
    }
    let should_mask = |word: &str| {
        let lw = word.to_lowercase();
        match config.mode {
            MaskMode::WhWordMask => WH_WORDS.contains(&lw.as_str()),
            MaskMode::ContentWordMask => !is_stopword(&lw),
            MaskMode::None => false,
        }
    };
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if !word.is_empty() {
            if should_mask(word) {
                out.push_str(&config.mask_token);
            } else {
                out.push_str(word);
            }
            word.clear();
        }
    };
    let mut in_mask_token = 0usize;
    let mask_chars: Vec<char> = config.mask_token.chars().collect();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        // Existing mask tokens pass through untouched.
        if in_mask_token == 0 && !mask_chars.is_empty() && chars[i..].starts_with(&mask_chars) {
            flush(&mut word, &mut out);
            in_mask_token = mask_chars.len();
        }
        if in_mask_token > 0 {
            out.push(chars[i]);
            in_mask_token -= 1;
        } else if chars[i].is_alphanumeric() || chars[i] == '\'' {
            word.push(chars[i]);
        } else {
            flush(&mut word, &mut out);
            out.push(chars[i]);
        }
        i += 1;
    }
    flush(&mut word, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, Meeting, SplitName, SynthSpec};
    use crate::segmenter::utterance_passages;

    fn instance(summary: &str) -> QueryInstance {
        QueryInstance {
            query_id: "q".into(),
            meeting_id: "m".into(),
            query: "What about the remote?".into(),
            reference_summary: summary.into(),
            gold_spans: vec![],
            query_type: None,
        }
    }

    fn passages(texts: &[&str]) -> Vec<Passage> {
        let m = Meeting::new("m", texts.iter().map(|t| ("pm".to_string(), t.to_string())).collect());
        utterance_passages(&m)
    }

    fn score(e: &RelevanceExample) -> f64 {
        match e.target {
            RelevanceTarget::Score(s) => s,
            _ => panic!("expected score"),
        }
    }

    #[test]
    fn identical_and_disjoint_targets() {
        let m = Meeting::new(
            "m",
            vec![
                ("pm".into(), "remote is cheap".into()),
                ("ui".into(), "zebra quartz".into()),
            ],
        );
        let ps = utterance_passages(&m);
        let t = regression_targets(&instance("pm: remote is cheap"), &ps, &RougeConfig::default()).unwrap();
        assert!((score(&t[0]) - 1.0).abs() < 1e-12);
        assert_eq!(score(&t[1]), 0.0);
        assert_eq!(t[0].query_text, "What about the remote?");
    }

    #[test]
    fn foreign_passage_rejected() {
        let mut ps = passages(&["a"]);
        ps[0].meeting_id = "other".into();
        assert!(regression_targets(&instance("a"), &ps, &RougeConfig::default()).is_err());
    }

    #[test]
    fn planted_passage_is_the_positive() {
        let c = synth_corpus(11, &SynthSpec::default()).unwrap();
        let cfg = RougeConfig::default();
        for (inst, m) in c.pairs(SplitName::Train).take(20) {
            let ps = utterance_passages(m);
            let t = regression_targets(inst, &ps, &cfg).unwrap();
            let labels = binary_labels(inst, &ps, 1, 3, 0, &cfg).unwrap();
            let pos = &labels[0];
            assert_eq!(pos.target, RelevanceTarget::Label(BinaryLabel::Positive));
            assert!(inst.is_gold(ps[pos.passage_index].span.start));
            let best_distractor = t
                .iter()
                .filter(|e| !inst.is_gold(ps[e.passage_index].span.start))
                .map(score)
                .fold(0.0, f64::max);
            assert!(score(&t[pos.passage_index]) > best_distractor);
        }
    }

    #[test]
    fn ties_break_to_lowest_index_and_sampling_is_seeded() {
        let ps = passages(&["same words", "same words", "same words", "same words", "same words"]);
        let inst = instance("same words");
        let cfg = RougeConfig::default();
        let a = binary_labels(&inst, &ps, 2, 2, 42, &cfg).unwrap();
        assert_eq!(a[0].passage_index, 0);
        assert_eq!(a[1].passage_index, 1);
        let b = binary_labels(&inst, &ps, 2, 2, 42, &cfg).unwrap();
        assert_eq!(a, b);
        let pos: Vec<usize> = a[..2].iter().map(|e| e.passage_index).collect();
        assert!(a[2..].iter().all(|e| !pos.contains(&e.passage_index)));
        assert!(binary_labels(&inst, &ps, 3, 3, 0, &cfg).is_err());
        assert!(binary_labels(&inst, &ps, 0, 3, 0, &cfg).is_err());
    }

    #[test]
    fn wh_mask() {
        let cfg = MaskingConfig::new(MaskMode::WhWordMask);
        let once = mask_query("What did the group decide?", &cfg);
        assert_eq!(once, "[MASK] did the group decide?");
        assert_eq!(mask_query(&once, &cfg), once);
        assert_eq!(
            mask_query("Who said WHY, and how?", &cfg),
            "[MASK] said [MASK], and [MASK]?"
        );
    }

    #[test]
    fn none_mask_is_identity() {
        let cfg = MaskingConfig::new(MaskMode::None);
        let s = "What did the group decide?";
        assert_eq!(mask_query(s, &cfg), s);
    }

    #[test]
    fn content_mask_keeps_stopwords() {
        let cfg = MaskingConfig::new(MaskMode::ContentWordMask);
        let input = "What did the group decide about the remote?";
        let out = mask_query(input, &cfg);
        assert_eq!(out, "What did the [MASK] [MASK] about the [MASK]?");
        let in_words: Vec<&str> = input
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let out_words: Vec<&str> = out.split(' ').collect();
        for (a, b) in in_words.iter().zip(&out_words) {
            let b = b.trim_end_matches('?');
            if is_stopword(&a.to_lowercase()) {
                assert_eq!(*a, b);
            } else {
                assert_eq!(b, "[MASK]");
            }
        }
    }

    #[test]
    fn empty_mask_token_invalid() {
        let cfg = MaskingConfig {
            mode: MaskMode::WhWordMask,
            mask_token: String::new(),
        };
        assert!(cfg.validate().is_err());
        assert!(MaskingConfig {
            mode: MaskMode::None,
            mask_token: String::new()
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn record_serialization() {
        let e = RelevanceExample {
            query_id: "q".into(),
            query_text: "x".into(),
            passage_id: "p".into(),
            passage_index: 0,
            target: RelevanceTarget::Label(BinaryLabel::Negative),
        };
        let s = serde_json::to_string(&RelevanceRecord::from(&e)).unwrap();
        assert_eq!(s, r#"{"query_id":"q","passage_id":"p","label":"negative"}"#);
    }
}
