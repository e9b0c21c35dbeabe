//! Passage scorers and score-and-rank extraction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, QueryInstance};
use crate::error::{Error, Result};
use crate::nn::objective::dual_scale;
use crate::nn::params::PRIMARY_ENCODER;
use crate::nn::tensor::dot;
use crate::nn::vocab::{self, Vocab, PSG, QRY, SEP};
use crate::nn::{Checkpoint, EncoderInput, Example, ModelKind};
use crate::relevance::{argsort_desc, BinaryLabel, RelevanceExample, RelevanceTarget};
use crate::segmenter::Passage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    /// Index of the passage in the scored input list.
    pub position: usize,
    pub passage: Passage,
    pub score: f64,
}

/// Passages by descending score, ties by ascending position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPassageList {
    pub items: Vec<ScoredPassage>,
}

impl RankedPassageList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top(&self, k: usize) -> &[ScoredPassage] {
        &self.items[..k.min(self.items.len())]
    }

    /// JSONL records in rank order (rank starts at 1).
    pub fn records(&self, query_id: &str) -> Vec<RankRecord> {
        self.items
            .iter()
            .enumerate()
            .map(|(r, it)| RankRecord {
                query_id: query_id.to_owned(),
                passage_id: it.passage.passage_id.clone(),
                rank: r + 1,
                score: it.score,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub query_id: String,
    pub passage_id: String,
    pub rank: usize,
    pub score: f64,
}

pub fn write_rankings(path: &Path, records: &[RankRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Rebuilds a ranked list from one query's records. The records must rank
/// every passage exactly once.
pub fn from_records(passages: &[Passage], records: &[RankRecord]) -> Result<RankedPassageList> {
    if records.len() != passages.len() {
        return Err(Error::Validation(format!(
            "{} rank records for {} passages",
            records.len(),
            passages.len()
        )));
    }
    let mut sorted: Vec<&RankRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.rank);
    let mut seen = vec![false; passages.len()];
    let mut items = Vec::with_capacity(passages.len());
    for (i, r) in sorted.into_iter().enumerate() {
        if r.rank != i + 1 {
            return Err(Error::Validation(format!(
                "query {}: ranks are not 1..={}",
                r.query_id,
                passages.len()
            )));
        }
        let position = passages
            .iter()
            .position(|p| p.passage_id == r.passage_id)
            .ok_or_else(|| Error::Validation(format!("unknown passage {}", r.passage_id)))?;
        if std::mem::replace(&mut seen[position], true) {
            return Err(Error::Validation(format!("passage {} ranked twice", r.passage_id)));
        }
        items.push(ScoredPassage {
            position,
            passage: passages[position].clone(),
            score: r.score,
        });
    }
    Ok(RankedPassageList { items })
}

/// Sorts passages by score. Scores must be finite and match in number.
pub fn rank(passages: &[Passage], scores: &[f64]) -> Result<RankedPassageList> {
    if passages.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} passages",
            scores.len(),
            passages.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score for passage {i}")));
    }
    Ok(RankedPassageList {
        items: argsort_desc(scores)
            .into_iter()
            .map(|i| ScoredPassage {
                position: i,
                passage: passages[i].clone(),
                score: scores[i],
            })
            .collect(),
    })
}

/// Scores `-position`, which keeps the original order.
pub fn lead_scores(passages: &[Passage]) -> RankedPassageList {
    let scores: Vec<f64> = (0..passages.len()).map(|i| -(i as f64)).collect();
    rank(passages, &scores).expect("finite scores")
}

/// Gold-span passages first (in original order), then the rest.
pub fn oracle_scores(instance: &QueryInstance, passages: &[Passage]) -> Result<RankedPassageList> {
    if instance.gold_spans.is_empty() {
        return Err(Error::OracleUnavailable(format!(
            "query {} has no gold spans",
            instance.query_id
        )));
    }
    let scores: Vec<f64> = passages
        .iter()
        .map(|p| match p.utterance_index() {
            Some(u) if instance.is_gold(u) => 1.0,
            _ => 0.0,
        })
        .collect();
    rank(passages, &scores)
}

/// A (possibly truncated) passage inside an extract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractPiece {
    pub position: usize,
    pub passage_id: String,
    pub utterance_index: Option<usize>,
    pub tokens: Vec<String>,
    pub partial: bool,
}

/// Budgeted concatenation of ranked passages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Extract {
    pub pieces: Vec<ExtractPiece>,
}

impl Extract {
    /// Passage tokens only; separators are not counted.
    pub fn token_count(&self) -> usize {
        self.pieces.iter().map(|p| p.tokens.len()).sum()
    }

    pub fn words(&self) -> Vec<String> {
        self.pieces.iter().flat_map(|p| p.tokens.iter().cloned()).collect()
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }

    /// Tokens with a `[SEP]` between consecutive passages.
    pub fn model_tokens(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.token_count() + self.pieces.len());
        for (i, p) in self.pieces.iter().enumerate() {
            if i > 0 {
                out.push(vocab::RESERVED[SEP].to_owned());
            }
            out.extend(p.tokens.iter().cloned());
        }
        out
    }

    /// Utterance indices with at least one token in the extract.
    pub fn utterance_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.pieces.iter().filter_map(|p| p.utterance_index).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Concatenates passages in rank order and cuts at `budget` passage tokens.
/// The query is budgeted separately by the caller.
pub fn rank_and_truncate(ranked: &RankedPassageList, budget: usize) -> Result<Extract> {
    if budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    let mut left = budget;
    let mut pieces = Vec::new();
    for it in &ranked.items {
        if left == 0 {
            break;
        }
        let toks = &it.passage.tokens.0;
        if toks.is_empty() {
            continue;
        }
        let take = toks.len().min(left);
        left -= take;
        pieces.push(ExtractPiece {
            position: it.position,
            passage_id: it.passage.passage_id.clone(),
            utterance_index: it.passage.utterance_index(),
            tokens: toks[..take].to_vec(),
            partial: take < toks.len(),
        });
    }
    Ok(Extract { pieces })
}

/// Top-`k` passages in rank order, untruncated.
pub fn top_k_extract(ranked: &RankedPassageList, k: usize) -> Extract {
    Extract {
        pieces: ranked
            .top(k)
            .iter()
            .map(|it| ExtractPiece {
                position: it.position,
                passage_id: it.passage.passage_id.clone(),
                utterance_index: it.passage.utterance_index(),
                tokens: it.passage.tokens.0.clone(),
                partial: false,
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Inner product scaled by `1/sqrt(d_model)`.
    Dot,
    Cosine,
}

/// Dual-encoder options stored in checkpoint settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualSettings {
    /// Prefix `[QRY]` / `[PSG]` type tokens.
    pub type_tokens: bool,
    /// Query and passage share one encoder.
    pub tied: bool,
    pub similarity: Similarity,
}

impl DualSettings {
    pub fn relregtt() -> Self {
        DualSettings {
            type_tokens: true,
            tied: true,
            similarity: Similarity::Dot,
        }
    }

    pub fn dpr() -> Self {
        DualSettings {
            type_tokens: false,
            tied: false,
            similarity: Similarity::Dot,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.settings.is_null() {
            return Ok(match ck.kind {
                ModelKind::ExtractorDpr => Self::dpr(),
                _ => Self::relregtt(),
            });
        }
        Ok(serde_json::from_value(ck.settings.clone())?)
    }
}

fn truncated(ids: Vec<usize>, max: usize) -> Vec<usize> {
    let mut ids = ids;
    ids.truncate(max);
    ids
}

/// `query SEP passage` for the single encoder, trimming the passage tail to
/// fit `max_positions`. Errors when the query alone does not fit.
pub fn single_input(vocab: &Vocab, query: &str, passage: &Passage, max_positions: usize) -> Result<EncoderInput> {
    let q = vocab.encode(query);
    if q.len() + 2 > max_positions {
        return Err(Error::invalid(format!(
            "query of {} tokens leaves no room for a passage within {max_positions} positions",
            q.len()
        )));
    }
    let p = truncated(vocab.encode_words(&passage.tokens.0), max_positions - q.len() - 1);
    Ok(EncoderInput::with_query(&q, SEP, &p))
}

fn side_ids(words: Vec<usize>, type_token: Option<usize>, max_positions: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = type_token.into_iter().collect();
    ids.extend(words);
    if ids.is_empty() {
        ids.push(vocab::UNK);
    }
    truncated(ids, max_positions)
}

pub fn dual_query_ids(vocab: &Vocab, query: &str, s: &DualSettings, max_positions: usize) -> Vec<usize> {
    side_ids(vocab.encode(query), s.type_tokens.then_some(QRY), max_positions)
}

pub fn dual_passage_ids(vocab: &Vocab, passage: &Passage, s: &DualSettings, max_positions: usize) -> Vec<usize> {
    side_ids(
        vocab.encode_words(&passage.tokens.0),
        s.type_tokens.then_some(PSG),
        max_positions,
    )
}

pub fn similarity(q: &[f64], p: &[f64], sim: Similarity, d_model: usize) -> f64 {
    match sim {
        Similarity::Dot => dot(q, p) * dual_scale(d_model),
        Similarity::Cosine => {
            let n = (dot(q, q) * dot(p, p)).sqrt();
            if n == 0.0 {
                0.0
            } else {
                dot(q, p) / n
            }
        }
    }
}

/// Scores passages for a query with a trained extractor checkpoint.
pub struct Scorer<'a> {
    pub ck: &'a Checkpoint,
    dual: Option<DualSettings>,
}

impl<'a> Scorer<'a> {
    pub fn new(ck: &'a Checkpoint) -> Result<Self> {
        let dual = match ck.kind {
            ModelKind::ExtractorSingle => None,
            ModelKind::ExtractorDual | ModelKind::ExtractorDpr => Some(DualSettings::from_checkpoint(ck)?),
            k => return Err(Error::Incompatible(format!("{} is not an extractor", k.as_str()))),
        };
        Ok(Scorer { ck, dual })
    }

    fn max_pos(&self) -> usize {
        self.ck.model.cfg.max_positions
    }

    pub fn score_single(&self, query: &str, passage: &Passage) -> Result<f64> {
        let input = single_input(&self.ck.vocab, query, passage, self.max_pos())?;
        self.ck.model.regress(&input)
    }

    pub fn embed_query(&self, query: &str) -> Result<Vec<f64>> {
        let s = self.dual_settings()?;
        let ids = dual_query_ids(&self.ck.vocab, query, &s, self.max_pos());
        self.ck.model.pooled(PRIMARY_ENCODER, &ids)
    }

    /// Passage embedding; may be cached and reused across queries.
    pub fn embed_passage(&self, passage: &Passage) -> Result<Vec<f64>> {
        let s = self.dual_settings()?;
        let ids = dual_passage_ids(&self.ck.vocab, passage, &s, self.max_pos());
        self.ck.model.pooled(self.ck.model.layout.passage_encoder(), &ids)
    }

    fn dual_settings(&self) -> Result<DualSettings> {
        self.dual
            .ok_or_else(|| Error::Incompatible("single-encoder checkpoint has no embeddings".into()))
    }

    pub fn score_dual(&self, query: &str, passage: &Passage) -> Result<f64> {
        let q = self.embed_query(query)?;
        let p = self.embed_passage(passage)?;
        self.score_embeddings(&q, &p)
    }

    pub fn score_embeddings(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        let s = self.dual_settings()?;
        Ok(similarity(q, p, s.similarity, self.ck.model.cfg.d_model))
    }

    pub fn score(&self, query: &str, passage: &Passage) -> Result<f64> {
        match self.dual {
            None => self.score_single(query, passage),
            Some(_) => self.score_dual(query, passage),
        }
    }

    pub fn score_all(&self, query: &str, passages: &[Passage]) -> Result<Vec<f64>> {
        match self.dual {
            None => passages.iter().map(|p| self.score_single(query, p)).collect(),
            Some(_) => {
                let q = self.embed_query(query)?;
                passages
                    .iter()
                    .map(|p| self.score_embeddings(&q, &self.embed_passage(p)?))
                    .collect()
            }
        }
    }

    pub fn rank(&self, query: &str, passages: &[Passage]) -> Result<RankedPassageList> {
        rank(passages, &self.score_all(query, passages)?)
    }
}

fn score_of(e: &RelevanceExample) -> Result<f64> {
    match e.target {
        RelevanceTarget::Score(s) => Ok(s),
        RelevanceTarget::Label(_) => Err(Error::invalid("expected a regression target")),
    }
}

/// Regression examples for the single encoder.
pub fn single_examples(
    vocab: &Vocab,
    max_positions: usize,
    query: &str,
    passages: &[Passage],
    targets: &[RelevanceExample],
) -> Result<Vec<Example>> {
    targets
        .iter()
        .map(|t| {
            Ok(Example::Regression {
                input: single_input(vocab, query, &passages[t.passage_index], max_positions)?,
                target: score_of(t)?,
            })
        })
        .collect()
}

/// Inner-product regression examples for the dual encoder.
pub fn pair_examples(
    vocab: &Vocab,
    max_positions: usize,
    settings: &DualSettings,
    query: &str,
    passages: &[Passage],
    targets: &[RelevanceExample],
) -> Result<Vec<Example>> {
    let q = dual_query_ids(vocab, query, settings, max_positions);
    targets
        .iter()
        .map(|t| {
            Ok(Example::PairRegression {
                query: q.clone(),
                passage: dual_passage_ids(vocab, &passages[t.passage_index], settings, max_positions),
                target: score_of(t)?,
            })
        })
        .collect()
}

/// Labelled candidates of one query, for contrastive training.
#[derive(Clone, Debug)]
pub struct LabelledQuery {
    pub query: Vec<usize>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

pub fn labelled_query(
    vocab: &Vocab,
    max_positions: usize,
    settings: &DualSettings,
    query: &str,
    passages: &[Passage],
    labels: &[RelevanceExample],
) -> LabelledQuery {
    let mut lq = LabelledQuery {
        query: dual_query_ids(vocab, query, settings, max_positions),
        positives: Vec::new(),
        negatives: Vec::new(),
    };
    for l in labels {
        let ids = dual_passage_ids(vocab, &passages[l.passage_index], settings, max_positions);
        match l.target {
            RelevanceTarget::Label(BinaryLabel::Positive) => lq.positives.push(ids),
            _ => lq.negatives.push(ids),
        }
    }
    lq
}

/// Softmax-NLL examples with in-batch negatives: each query in a group of
/// `group` consecutive queries sees its own positive and sampled negatives
/// plus the positives of the other queries in the group.
pub fn contrastive_examples(queries: &[LabelledQuery], group: usize) -> Vec<Example> {
    let mut out = Vec::new();
    for chunk in queries.chunks(group.max(1)) {
        for (qi, q) in chunk.iter().enumerate() {
            for pos in &q.positives {
                let mut passages = vec![pos.clone()];
                passages.extend(q.negatives.iter().cloned());
                for (oi, other) in chunk.iter().enumerate() {
                    if oi != qi {
                        passages.extend(other.positives.iter().cloned());
                    }
                }
                out.push(Example::Contrastive {
                    query: q.query.clone(),
                    passages,
                    positive: 0,
                });
            }
        }
    }
    out
}
