//! Scorable passages (one per utterance) and fixed-length model-input segments.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::Meeting;
use crate::error::{Error, Result};
use crate::rouge::{normalize, RougeConfig, TokenSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanUnit {
    Utterance,
    Token,
}

/// Half-open provenance range of a passage in its source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageSpan {
    pub unit: SpanUnit,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub meeting_id: String,
    pub span: PassageSpan,
    /// Display text (`speaker: text` for utterance passages).
    pub text: String,
    /// Model-facing word tokens (normalized, unstemmed).
    pub tokens: TokenSequence,
}

impl Passage {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Utterance index for utterance-level passages.
    pub fn utterance_index(&self) -> Option<usize> {
        (self.span.unit == SpanUnit::Utterance).then_some(self.span.start)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentUnit {
    Utterance,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub unit: SegmentUnit,
    pub segment_length: usize,
    /// 0 for disjoint segments, 0.5 for half-overlapping ones.
    pub overlap_fraction: f64,
}

impl SegmentationConfig {
    pub fn fixed(segment_length: usize, overlap_fraction: f64) -> Self {
        SegmentationConfig {
            unit: SegmentUnit::Fixed,
            segment_length,
            overlap_fraction,
        }
    }

    pub fn stride(&self) -> usize {
        (self.segment_length as f64 * (1.0 - self.overlap_fraction)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::invalid(format!(
                "overlap_fraction {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        if self.unit == SegmentUnit::Fixed && (self.segment_length == 0 || self.stride() == 0) {
            return Err(Error::invalid(
                "fixed segmentation needs segment_length >= 1 and stride >= 1",
            ));
        }
        Ok(())
    }
}

/// One passage per utterance, in order, with the speaker prepended. Utterances
/// whose text normalizes to nothing are dropped; the remaining spans keep
/// their original utterance indices.
pub fn utterance_passages(meeting: &Meeting) -> Vec<Passage> {
    let plain = RougeConfig::plain();
    meeting
        .utterances
        .iter()
        .filter(|u| !normalize(&u.text, &plain).is_empty())
        .map(|u| {
            let text = format!("{}: {}", u.speaker, u.text);
            Passage {
                passage_id: format!("{}:u{}", meeting.meeting_id, u.index),
                meeting_id: meeting.meeting_id.clone(),
                span: PassageSpan {
                    unit: SpanUnit::Utterance,
                    start: u.index,
                    end: u.index + 1,
                },
                tokens: normalize(&text, &plain),
                text,
            }
        })
        .collect()
}

/// Token ranges of fixed-length segments over a sequence of `len` tokens.
///
/// Starts are `0, stride, 2*stride, ..` while `start < len`; each range is
/// `[start, min(start + L, len))`. A trailing segment contained in its
/// predecessor is omitted, which amounts to stopping once a segment reaches
/// the end of the input.
pub fn fixed_segment_ranges(len: usize, config: &SegmentationConfig) -> Result<Vec<Range<usize>>> {
    if config.unit != SegmentUnit::Fixed {
        return Err(Error::invalid("fixed_segments requires unit = fixed"));
    }
    config.validate()?;
    let stride = config.stride();
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + config.segment_length).min(len);
        out.push(start..end);
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(out)
}

pub fn fixed_segments(source_id: &str, tokens: &TokenSequence, config: &SegmentationConfig) -> Result<Vec<Passage>> {
    Ok(fixed_segment_ranges(tokens.len(), config)?
        .into_iter()
        .map(|r| {
            let toks = TokenSequence(tokens.0[r.clone()].to_vec());
            Passage {
                passage_id: format!("{source_id}:t{}-{}", r.start, r.end),
                meeting_id: source_id.to_owned(),
                span: PassageSpan {
                    unit: SpanUnit::Token,
                    start: r.start,
                    end: r.end,
                },
                text: toks.join(),
                tokens: toks,
            }
        })
        .collect())
}
