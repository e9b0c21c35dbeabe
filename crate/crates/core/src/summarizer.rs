//! Abstractive summarizers: input construction and decoding shared by the
//! dense, local+global and segment-encoding variants.

use serde::{Deserialize, Serialize};

use crate::corpus::Meeting;
use crate::error::{Error, Result};
use crate::nn::decode::{beam_search, BeamConfig, MemoryDecoder};
use crate::nn::vocab::{Vocab, BOS, EOS, SEP};
use crate::nn::{Checkpoint, EncoderInput, Example, Matrix, ModelConfig, ModelKind};
use crate::segenc::{budget_query, segment_inputs, SegEncConfig};
use crate::segmenter::utterance_passages;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummarizerSettings {
    /// Positions reserved for the query, separator included.
    pub query_budget: usize,
    /// Maximum generated tokens, EOS included.
    pub max_target_len: usize,
    pub beams: usize,
    pub length_penalty: f64,
    /// Present for segment-encoding summarizers.
    pub segenc: Option<SegEncConfig>,
}

impl SummarizerSettings {
    pub fn new(query_budget: usize, max_target_len: usize) -> Self {
        SummarizerSettings {
            query_budget,
            max_target_len,
            beams: 4,
            length_penalty: 1.0,
            segenc: None,
        }
    }

    pub fn validate(&self, kind: ModelKind, cfg: &ModelConfig) -> Result<()> {
        if self.query_budget < 2 || self.query_budget >= cfg.max_positions {
            return Err(Error::invalid(format!(
                "query_budget {} must be in [2, max_positions)",
                self.query_budget
            )));
        }
        if self.max_target_len == 0 || self.max_target_len > cfg.max_positions {
            return Err(Error::invalid("max_target_len must be in [1, max_positions]"));
        }
        if self.beams == 0 {
            return Err(Error::invalid("beams must be >= 1"));
        }
        match (kind, &self.segenc) {
            (ModelKind::SummarizerSegenc, Some(s)) => s.validate(cfg),
            (ModelKind::SummarizerSegenc, None) => Err(Error::invalid("segment encoding needs a segenc config")),
            (k, _) if k.is_summarizer() => Ok(()),
            (k, _) => Err(Error::Incompatible(format!("{} is not a summarizer", k.as_str()))),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let s: SummarizerSettings = serde_json::from_value(ck.settings.clone())
            .map_err(|e| Error::Format(format!("summarizer settings: {e}")))?;
        s.validate(ck.kind, &ck.model.cfg)?;
        Ok(s)
    }
}

/// Source words of a meeting: utterance passages in order, speaker included.
pub fn meeting_source(meeting: &Meeting) -> Vec<String> {
    utterance_passages(meeting)
        .into_iter()
        .flat_map(|p| p.tokens.0)
        .collect()
}

/// Encoder inputs for a query and source ids. Dense and local+global models
/// see `query SEP source` cut to `max_positions`; segment encoders get one
/// input per segment.
pub fn encoder_inputs(
    kind: ModelKind,
    cfg: &ModelConfig,
    settings: &SummarizerSettings,
    query: &[usize],
    source: &[usize],
) -> Result<Vec<EncoderInput>> {
    if source.is_empty() {
        return Err(Error::invalid("empty source"));
    }
    match kind {
        ModelKind::SummarizerSegenc => {
            let seg = settings
                .segenc
                .as_ref()
                .ok_or_else(|| Error::invalid("segment encoding needs a segenc config"))?;
            segment_inputs(query, source, seg)
        }
        ModelKind::SummarizerDense | ModelKind::SummarizerLocalglobal => {
            let q = budget_query(query, settings.query_budget);
            let room = cfg.max_positions - q.len() - 1;
            Ok(vec![EncoderInput::with_query(
                &q,
                SEP,
                &source[..source.len().min(room)],
            )])
        }
        k => Err(Error::Incompatible(format!("{} is not a summarizer", k.as_str()))),
    }
}

/// Summary ids followed by EOS, cut to `max_len` (EOS kept).
pub fn target_ids(vocab: &Vocab, summary: &str, max_len: usize) -> Vec<usize> {
    let mut ids = vocab.encode(summary);
    ids.truncate(max_len.saturating_sub(1));
    ids.push(EOS);
    ids
}

pub fn seq2seq_example(
    ck: &Checkpoint,
    settings: &SummarizerSettings,
    query: &str,
    source: &[String],
    summary: &str,
) -> Result<Example> {
    let v = &ck.vocab;
    Ok(Example::Seq2Seq {
        segments: encoder_inputs(
            ck.kind,
            &ck.model.cfg,
            settings,
            &v.encode(query),
            &v.encode_words(source),
        )?,
        target: target_ids(v, summary, settings.max_target_len),
    })
}

/// Encoder memory for a query and source under the checkpoint's settings.
pub fn memory(ck: &Checkpoint, settings: &SummarizerSettings, query: &str, source: &[String]) -> Result<Matrix> {
    let v = &ck.vocab;
    let inputs = encoder_inputs(
        ck.kind,
        &ck.model.cfg,
        settings,
        &v.encode(query),
        &v.encode_words(source),
    )?;
    ck.model.encode_segments(&inputs)
}

/// Beam-decoded summary text.
pub fn summarize(ck: &Checkpoint, settings: &SummarizerSettings, query: &str, source: &[String]) -> Result<String> {
    let mem = memory(ck, settings, query, source)?;
    let dec = MemoryDecoder {
        model: &ck.model,
        memory: &mem,
    };
    let h = beam_search(
        &dec,
        &BeamConfig {
            beams: settings.beams,
            max_len: settings.max_target_len,
            length_penalty: settings.length_penalty,
            bos: BOS,
            eos: EOS,
        },
    )?;
    Ok(ck.vocab.decode(&h.tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Model, ParamLayout};

    #[test]
    fn dense_input_truncates_source_not_query() {
        let cfg = ModelConfig::tiny(20, 10);
        let s = SummarizerSettings::new(4, 5);
        let inputs = encoder_inputs(ModelKind::SummarizerDense, &cfg, &s, &[8, 9], &[10; 20]).unwrap();
        assert_eq!(inputs.len(), 1);
        assert_eq!(inputs[0].ids.len(), 10);
        assert_eq!(&inputs[0].ids[..3], &[8, 9, SEP]);
        assert_eq!(inputs[0].query_len, 3);
    }

    #[test]
    fn target_keeps_eos() {
        let v = Vocab::build(["a b c d"].iter(), 1, None);
        let t = target_ids(&v, "a b c d", 3);
        assert_eq!(t.len(), 3);
        assert_eq!(*t.last().unwrap(), EOS);
    }

    #[test]
    fn settings_round_trip_through_checkpoint() {
        let v = Vocab::build(["a b"].iter(), 1, None);
        let m = Model::init(ModelConfig::tiny(v.len(), 16), ParamLayout::seq2seq(), 0).unwrap();
        let mut ck = Checkpoint::new(ModelKind::SummarizerDense, m, v).unwrap();
        let s = SummarizerSettings::new(4, 6);
        ck.settings = serde_json::to_value(s).unwrap();
        assert_eq!(SummarizerSettings::from_checkpoint(&ck).unwrap(), s);
        ck.kind = ModelKind::SummarizerSegenc;
        assert!(SummarizerSettings::from_checkpoint(&ck).is_err());
    }
}
