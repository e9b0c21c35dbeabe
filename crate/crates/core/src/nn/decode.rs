use std::cmp::Ordering;

use super::model::Model;
use super::tensor::{log_softmax, Matrix};
use crate::error::{Error, Result};

/// Anything that yields next-token log-probabilities for a prefix.
pub trait StepModel {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// A model decoding against a fixed encoder memory.
pub struct MemoryDecoder<'a> {
    pub model: &'a Model,
    pub memory: &'a Matrix,
}

impl StepModel for MemoryDecoder<'_> {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let l = self.model.decoder_logits(prefix, self.memory)?;
        Ok(log_softmax(l.row(l.rows - 1)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beams: usize,
    pub max_len: usize,
    /// Exponent α in `logprob / len^α`; 0 ranks by raw summed log-probability.
    pub length_penalty: f64,
    pub bos: usize,
    pub eos: usize,
}

/// A decoded sequence (without BOS/EOS) and its scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

/// Beam search keeping the `beams` best partial hypotheses by cumulative
/// log-probability. Hypotheses ending in EOS are set aside; decoding stops
/// once `beams` have finished, no live hypothesis remains, or `max_len`
/// tokens have been generated. The best hypothesis by length-normalized
/// score is returned; ties go to the one completed first.
pub fn beam_search(model: &dyn StepModel, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.beams == 0 {
        return Err(Error::invalid("beams must be >= 1"));
    }
    if cfg.max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(vec![cfg.bos], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..cfg.max_len {
        let mut cands: Vec<(Vec<usize>, f64)> = Vec::new();
        for (prefix, lp) in &alive {
            let next = model.log_probs(prefix)?;
            for (t, &l) in next.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut p = prefix.clone();
                p.push(t);
                cands.push((p, lp + l));
            }
        }
        // stable sort keeps (beam order, token id) among equal scores
        cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
        cands.truncate(cfg.beams);
        alive.clear();
        let last = step + 1 == cfg.max_len;
        for (seq, lp) in cands {
            let ended = *seq.last().unwrap() == cfg.eos;
            if ended || last {
                let gen_len = seq.len() - 1;
                let body = seq[1..seq.len() - usize::from(ended)].to_vec();
                finished.push(Hypothesis {
                    tokens: body,
                    log_prob: lp,
                    score: normalized(lp, gen_len, cfg.length_penalty),
                    finished: ended,
                });
            } else {
                alive.push((seq, lp));
            }
        }
        if alive.is_empty() || finished.len() >= cfg.beams {
            break;
        }
    }
    finished
        .into_iter()
        .reduce(|best, h| if h.score > best.score { h } else { best })
        .ok_or_else(|| Error::invalid("beam search produced no hypothesis"))
}

/// Argmax rollout (lowest id on ties) until EOS or `max_len` tokens.
pub fn greedy(model: &dyn StepModel, bos: usize, eos: usize, max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    let mut seq = vec![bos];
    let mut lp = 0.0;
    for _ in 0..max_len {
        let next = model.log_probs(&seq)?;
        let (t, l) =
            next.iter().copied().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, l)| if l > acc.1 { (i, l) } else { acc },
            );
        lp += l;
        seq.push(t);
        if t == eos {
            break;
        }
    }
    let ended = *seq.last().unwrap() == eos;
    Ok(Hypothesis {
        tokens: seq[1..seq.len() - usize::from(ended)].to_vec(),
        log_prob: lp,
        score: lp,
        finished: ended,
    })
}

/// Best completed sequence over every continuation up to `max_len`, by
/// exhaustive enumeration. Exponential; for verification only.
pub fn exhaustive_search(model: &dyn StepModel, cfg: &BeamConfig) -> Result<Hypothesis> {
    let mut best: Option<Hypothesis> = None;
    let mut stack = vec![(vec![cfg.bos], 0.0)];
    while let Some((seq, lp)) = stack.pop() {
        let next = model.log_probs(&seq)?;
        for (t, &l) in next.iter().enumerate() {
            let mut s = seq.clone();
            s.push(t);
            let total = lp + l;
            let ended = t == cfg.eos;
            if ended || s.len() - 1 == cfg.max_len {
                let h = Hypothesis {
                    tokens: s[1..s.len() - usize::from(ended)].to_vec(),
                    log_prob: total,
                    score: normalized(total, s.len() - 1, cfg.length_penalty),
                    finished: ended,
                };
                if best.as_ref().is_none_or(|b| h.score > b.score) {
                    best = Some(h);
                }
            } else {
                stack.push((s, total));
            }
        }
    }
    best.ok_or_else(|| Error::invalid("empty search space"))
}
