//! Segment-encoding summarizer: the source is cut into fixed-length
//! (optionally overlapping) segments, each segment is prefixed with the query
//! and encoded on its own, and the decoder cross-attends the concatenation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::decode::{beam_search, BeamConfig, MemoryDecoder};
use crate::nn::vocab::{Vocab, BOS, EOS, SEP};
use crate::nn::{Checkpoint, EncoderInput, Matrix, Model, ModelConfig};
use crate::rouge::TokenSequence;
use crate::segmenter::{fixed_segment_ranges, SegmentationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEncConfig {
    /// Source tokens kept (from the head) before segmentation.
    pub max_input_tokens: usize,
    pub segment_length: usize,
    pub overlap_fraction: f64,
    /// Positions reserved for the query, separator included.
    pub query_budget: usize,
}

impl SegEncConfig {
    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig::fixed(self.segment_length, self.overlap_fraction)
    }

    pub fn validate(&self, base: &ModelConfig) -> Result<()> {
        self.segmentation().validate()?;
        if self.query_budget < 2 {
            return Err(Error::invalid(
                "query_budget must leave room for a query token and the separator",
            ));
        }
        if self.segment_length + self.query_budget > base.max_positions {
            return Err(Error::invalid(format!(
                "segment_length {} + query_budget {} exceeds max_positions {}",
                self.segment_length, self.query_budget, base.max_positions
            )));
        }
        if self.max_input_tokens < self.segment_length {
            return Err(Error::invalid(format!(
                "max_input_tokens {} is shorter than segment_length {}",
                self.max_input_tokens, self.segment_length
            )));
        }
        Ok(())
    }
}

/// Concatenated segment encodings.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedMemory {
    pub embeddings: Matrix,
    /// Half-open row ranges of each segment in `embeddings`.
    pub segment_boundaries: Vec<(usize, usize)>,
}

/// Query ids cut to the budget (leaving one slot for the separator).
pub fn budget_query(query: &[usize], query_budget: usize) -> Vec<usize> {
    query[..query.len().min(query_budget.saturating_sub(1))].to_vec()
}

/// One `query SEP segment` input per segment of the head-truncated source.
pub fn segment_inputs(query: &[usize], source: &[usize], cfg: &SegEncConfig) -> Result<Vec<EncoderInput>> {
    if source.is_empty() {
        return Err(Error::invalid("empty source"));
    }
    let q = budget_query(query, cfg.query_budget);
    let src = &source[..source.len().min(cfg.max_input_tokens)];
    Ok(fixed_segment_ranges(src.len(), &cfg.segmentation())?
        .into_iter()
        .map(|r| EncoderInput::with_query(&q, SEP, &src[r]))
        .collect())
}

/// Encodes every segment independently (positions restart per segment).
pub fn encode_fused(model: &Model, inputs: &[EncoderInput]) -> Result<FusedMemory> {
    let mut boundaries = Vec::with_capacity(inputs.len());
    let mut parts = Vec::with_capacity(inputs.len());
    let mut start = 0;
    for input in inputs {
        let e = model.encode_input(input)?;
        boundaries.push((start, start + e.rows));
        start += e.rows;
        parts.push(e);
    }
    let cols = model.cfg.d_model;
    let data: Vec<f64> = parts.into_iter().flat_map(|m| m.data).collect();
    Ok(FusedMemory {
        embeddings: Matrix::from_vec(start, cols, data),
        segment_boundaries: boundaries,
    })
}

pub fn segenc_encode(
    model: &Model,
    vocab: &Vocab,
    query: &str,
    source: &TokenSequence,
    cfg: &SegEncConfig,
) -> Result<FusedMemory> {
    cfg.validate(&model.cfg)?;
    let inputs = segment_inputs(&vocab.encode(query), &vocab.encode_words(&source.0), cfg)?;
    encode_fused(model, &inputs)
}

/// Beam-decodes a summary over the fused memory.
pub fn segenc_summarize(
    ck: &Checkpoint,
    query: &str,
    source: &TokenSequence,
    cfg: &SegEncConfig,
    beams: usize,
    max_len: usize,
) -> Result<String> {
    let mem = segenc_encode(&ck.model, &ck.vocab, query, source, cfg)?;
    let dec = MemoryDecoder {
        model: &ck.model,
        memory: &mem.embeddings,
    };
    let h = beam_search(
        &dec,
        &BeamConfig {
            beams,
            max_len,
            length_penalty: 1.0,
            bos: BOS,
            eos: EOS,
        },
    )?;
    Ok(ck.vocab.decode(&h.tokens))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub n_segments: usize,
    /// Encoder self-attention (query, key) pairs, per layer and head.
    pub encoder_attention_pairs: usize,
    /// Rows of the fused memory.
    pub memory_rows: usize,
    /// Bytes of fused memory plus per-segment attention scores, one layer.
    pub memory_estimate_bytes: usize,
}

/// Analytic cost for a source of `source_len` tokens and a query of
/// `query_len` tokens (separator included), both already within budget.
pub fn cost_profile(
    cfg: &SegEncConfig,
    base: &ModelConfig,
    source_len: usize,
    query_len: usize,
) -> Result<CostProfile> {
    let kept = source_len.min(cfg.max_input_tokens);
    let ranges = fixed_segment_ranges(kept, &cfg.segmentation())?;
    let n = ranges.len();
    let seg = query_len + cfg.segment_length;
    let pairs = n * seg * seg;
    let rows: usize = ranges.iter().map(|r| query_len + r.len()).sum();
    Ok(CostProfile {
        n_segments: n,
        encoder_attention_pairs: pairs,
        memory_rows: rows,
        memory_estimate_bytes: 8 * (rows * base.d_model + pairs * base.n_heads),
    })
}

/// Encoder self-attention pairs of a dense model over `n` tokens.
pub fn dense_pair_count(n: usize) -> usize {
    n * n
}
