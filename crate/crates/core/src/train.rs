//! Epoch loops, validation-based checkpoint selection and transfer chains.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryInstance, SplitName};
use crate::error::{Error, Result};
use crate::eval::{reciprocal_rank, span_overlap_of, top1_hit};
use crate::extractors::{
    contrastive_examples, labelled_query, pair_examples, rank_and_truncate, single_examples, DualSettings, Scorer,
};
use crate::nn::{
    AttentionWindow, Checkpoint, Example, Model, ModelConfig, OptimizerConfig, ParamLayout, ProvenanceStage, Trainer,
    Vocab,
};
use crate::relevance::{binary_labels, regression_targets, DEFAULT_NEGATIVES, DEFAULT_POSITIVES};
use crate::rouge::{evaluate, RougeConfig};
use crate::segmenter::utterance_passages;
use crate::summarizer::{meeting_source, seq2seq_example, summarize, SummarizerSettings};

pub use crate::nn::ModelKind;

/// Queries per group when assembling in-batch negatives for contrastive training.
pub const CONTRASTIVE_GROUP: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub kind: ModelKind,
    /// Name recorded in provenance.
    pub dataset: String,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Examples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulation_steps: usize,
    pub optimizer: OptimizerConfig,
}

impl TrainRun {
    pub fn new(kind: ModelKind, dataset: impl Into<String>) -> Self {
        TrainRun {
            kind,
            dataset: dataset.into(),
            epochs: 10,
            seed: 0,
            learning_rate: 1e-3,
            batch_size: 1,
            accumulation_steps: 4,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 || self.accumulation_steps == 0 {
            return Err(Error::invalid("batch_size and accumulation_steps must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn examples_per_step(&self) -> usize {
        self.batch_size * self.accumulation_steps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose state was returned.
    pub selected_epoch: usize,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains for `run.epochs` epochs over shuffled `examples`, scores the model
/// with `evaluate` after every epoch and returns the earliest epoch with the
/// highest score. Each epoch is appended to `log_path` as it finishes, so a
/// diverging run keeps the log of completed epochs.
pub fn train(
    run: &TrainRun,
    init: Checkpoint,
    examples: &[Example],
    evaluate: &mut dyn FnMut(&Checkpoint) -> Result<f64>,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    run.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if init.kind != run.kind {
        return Err(Error::Incompatible(format!(
            "run is for {} but checkpoint is {}",
            run.kind.as_str(),
            init.kind.as_str()
        )));
    }
    let mut log_file: Option<File> = log_path.map(File::create).transpose()?;
    let mut trainer = Trainer::new(init.model.clone(), run.optimizer, run.seed);
    let mut current = init;
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut log = Vec::with_capacity(run.epochs);
    let per_step = run.examples_per_step();
    let started = Instant::now();

    for epoch in 1..=run.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(run.seed, epoch)));
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for idx in order.chunks(per_step) {
            let batch: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
            let acc = run.accumulation_steps.min(batch.len());
            loss_sum += trainer.train_step(&batch, run.learning_rate, acc)?;
            steps += 1;
        }
        current.model = trainer.model.clone();
        let metric = evaluate(&current)?;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / steps as f64,
            val_metric: metric,
            wall_time: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
            f.flush()?;
        }
        log.push(entry);
        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, current.clone()));
        }
    }
    let (metric, selected_epoch, mut checkpoint) = best.expect("at least one epoch");
    checkpoint.provenance.push(ProvenanceStage {
        dataset: run.dataset.clone(),
        epochs: run.epochs,
    });
    checkpoint.selection_metric = Some(metric);
    Ok(TrainOutcome {
        checkpoint,
        log,
        selected_epoch,
    })
}

/// Appends one run-log line to an existing file.
pub fn append_log(path: &Path, entry: &EpochLog) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(entry)?)?;
    Ok(())
}

/// One stage of a transfer chain.
pub struct Stage<'a> {
    pub run: TrainRun,
    pub examples: Vec<Example>,
    pub evaluate: Box<dyn FnMut(&Checkpoint) -> Result<f64> + 'a>,
    /// Vocabulary the stage's examples were encoded with, if known.
    pub vocab: Option<Vocab>,
}

/// Trains the stages in order, each starting from the previous selection.
/// Returns one outcome per stage; the last holds the final checkpoint.
pub fn transfer_chain(init: Checkpoint, stages: Vec<Stage<'_>>) -> Result<Vec<TrainOutcome>> {
    if stages.is_empty() {
        return Err(Error::invalid("transfer chain needs at least one stage"));
    }
    let mut ck = init;
    let mut out = Vec::with_capacity(stages.len());
    for (i, mut stage) in stages.into_iter().enumerate() {
        if let Some(v) = &stage.vocab {
            if *v != ck.vocab {
                return Err(Error::Incompatible(format!(
                    "stage {} ({}) uses a different vocabulary ({} vs {} entries)",
                    i + 1,
                    stage.run.dataset,
                    v.len(),
                    ck.vocab.len()
                )));
            }
        }
        let o = train(&stage.run, ck, &stage.examples, &mut *stage.evaluate, None)?;
        ck = o.checkpoint.clone();
        out.push(o);
    }
    Ok(out)
}

/// Vocabulary over every utterance (speaker included), every query and the
/// training summaries of the given corpora.
pub fn corpus_vocab(corpora: &[&Corpus], min_count: usize, max_size: Option<usize>) -> Vocab {
    let mut texts: Vec<String> = Vec::new();
    for c in corpora {
        for m in c.meetings() {
            texts.extend(m.utterances.iter().map(|u| format!("{} {}", u.speaker, u.text)));
        }
        for split in SplitName::ALL {
            for inst in c.instances(split) {
                texts.push(inst.query.clone());
                if split == SplitName::Train {
                    texts.push(inst.reference_summary.clone());
                }
            }
        }
    }
    Vocab::build(texts.iter(), min_count, max_size)
}

/// Freshly initialized extractor with the layout and settings its kind implies.
pub fn new_extractor(kind: ModelKind, vocab: Vocab, cfg: ModelConfig, seed: u64) -> Result<Checkpoint> {
    let (layout, settings) = match kind {
        ModelKind::ExtractorSingle => (ParamLayout::scorer(), serde_json::Value::Null),
        ModelKind::ExtractorDual => (ParamLayout::dual(true), serde_json::to_value(DualSettings::relregtt())?),
        ModelKind::ExtractorDpr => (ParamLayout::dual(false), serde_json::to_value(DualSettings::dpr())?),
        k => return Err(Error::Incompatible(format!("{} is not an extractor", k.as_str()))),
    };
    let mut ck = Checkpoint::new(kind, Model::init(cfg, layout, seed)?, vocab)?;
    ck.settings = settings;
    Ok(ck)
}

/// Freshly initialized summarizer. Local+global models need a local window
/// with global query attention; the other kinds need dense attention.
pub fn new_summarizer(
    kind: ModelKind,
    vocab: Vocab,
    cfg: ModelConfig,
    settings: SummarizerSettings,
    seed: u64,
) -> Result<Checkpoint> {
    let local = matches!(cfg.attention_window, AttentionWindow::Local(_));
    match kind {
        ModelKind::SummarizerLocalglobal if !local || !cfg.global_query_attention => {
            return Err(Error::invalid(
                "local+global summarizer needs a local window and global query attention",
            ))
        }
        ModelKind::SummarizerDense | ModelKind::SummarizerSegenc if local => {
            return Err(Error::invalid(format!(
                "{} summarizer uses dense attention",
                kind.as_str()
            )))
        }
        _ => {}
    }
    settings.validate(kind, &cfg)?;
    let mut ck = Checkpoint::new(kind, Model::init(cfg, ParamLayout::seq2seq(), seed)?, vocab)?;
    ck.settings = serde_json::to_value(settings)?;
    Ok(ck)
}

/// Training examples for an extractor checkpoint over a split.
pub fn extractor_examples(
    ck: &Checkpoint,
    corpus: &Corpus,
    split: SplitName,
    seed: u64,
    rouge: &RougeConfig,
) -> Result<Vec<Example>> {
    let max_pos = ck.model.cfg.max_positions;
    let mut out = Vec::new();
    let mut labelled = Vec::new();
    for (inst, meeting) in corpus.pairs(split) {
        let passages = utterance_passages(meeting);
        match ck.kind {
            ModelKind::ExtractorSingle => {
                let t = regression_targets(inst, &passages, rouge)?;
                out.extend(single_examples(&ck.vocab, max_pos, &inst.query, &passages, &t)?);
            }
            ModelKind::ExtractorDual => {
                let s = DualSettings::from_checkpoint(ck)?;
                let t = regression_targets(inst, &passages, rouge)?;
                out.extend(pair_examples(&ck.vocab, max_pos, &s, &inst.query, &passages, &t)?);
            }
            ModelKind::ExtractorDpr => {
                let s = DualSettings::from_checkpoint(ck)?;
                let n_neg = DEFAULT_NEGATIVES.min(passages.len().saturating_sub(DEFAULT_POSITIVES));
                if n_neg == 0 {
                    continue;
                }
                let l = binary_labels(inst, &passages, DEFAULT_POSITIVES, n_neg, seed, rouge)?;
                labelled.push(labelled_query(&ck.vocab, max_pos, &s, &inst.query, &passages, &l));
            }
            k => return Err(Error::Incompatible(format!("{} is not an extractor", k.as_str()))),
        }
    }
    if ck.kind == ModelKind::ExtractorDpr {
        out = contrastive_examples(&labelled, CONTRASTIVE_GROUP);
    }
    Ok(out)
}

/// Mean recall of gold utterances inside the budgeted extract, over
/// instances that have gold spans.
pub fn extractor_recall(ck: &Checkpoint, corpus: &Corpus, split: SplitName, budget: usize) -> Result<f64> {
    let scorer = Scorer::new(ck)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (inst, meeting) in corpus.pairs(split) {
        if inst.gold_spans.is_empty() {
            continue;
        }
        let passages = utterance_passages(meeting);
        let extract = rank_and_truncate(&scorer.rank(&inst.query, &passages)?, budget)?;
        total += span_overlap_of(&extract, &inst.gold_indices()).recall;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid(format!(
            "split {} has no instances with gold spans",
            split.as_str()
        )));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingStats {
    pub top1: f64,
    pub mrr: f64,
    pub instances: usize,
}

/// Top-1 accuracy and mean reciprocal rank of the first gold utterance.
pub fn extractor_ranking(ck: &Checkpoint, corpus: &Corpus, split: SplitName) -> Result<RankingStats> {
    let scorer = Scorer::new(ck)?;
    let (mut hits, mut rr, mut n) = (0usize, 0.0, 0usize);
    for (inst, meeting) in corpus.pairs(split) {
        if inst.gold_spans.is_empty() {
            continue;
        }
        let ranked = scorer.rank(&inst.query, &utterance_passages(meeting))?;
        hits += usize::from(top1_hit(&ranked, inst));
        rr += reciprocal_rank(&ranked, inst);
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid(format!(
            "split {} has no instances with gold spans",
            split.as_str()
        )));
    }
    Ok(RankingStats {
        top1: hits as f64 / n as f64,
        mrr: rr / n as f64,
        instances: n,
    })
}

/// Summarization input and reference for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryItem {
    pub query_id: String,
    pub query: String,
    /// Source words (whole meeting, or an extract with `[SEP]` separators).
    pub source: Vec<String>,
    pub reference: String,
}

/// End-to-end items: the whole meeting is the source.
pub fn meeting_items(corpus: &Corpus, split: SplitName) -> Vec<SummaryItem> {
    corpus
        .pairs(split)
        .map(|(inst, m): (&QueryInstance, _)| SummaryItem {
            query_id: inst.query_id.clone(),
            query: inst.query.clone(),
            source: meeting_source(m),
            reference: inst.reference_summary.clone(),
        })
        .collect()
}

pub fn summarizer_examples(ck: &Checkpoint, items: &[SummaryItem]) -> Result<Vec<Example>> {
    let s = SummarizerSettings::from_checkpoint(ck)?;
    items
        .iter()
        .map(|it| seq2seq_example(ck, &s, &it.query, &it.source, &it.reference))
        .collect()
}

/// Generated summaries for `items` under the checkpoint's settings, with
/// the beam width overridden when `beams` is given.
pub fn generate(ck: &Checkpoint, items: &[SummaryItem], beams: Option<usize>) -> Result<Vec<String>> {
    let mut s = SummarizerSettings::from_checkpoint(ck)?;
    if let Some(b) = beams {
        s.beams = b;
    }
    items
        .iter()
        .map(|it| summarize(ck, &s, &it.query, &it.source))
        .collect()
}

/// Mean over items of the mean ROUGE F1 across variants, decoding with 4 beams.
pub fn summarizer_metric(ck: &Checkpoint, items: &[SummaryItem], rouge: &RougeConfig) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let outputs = generate(ck, items, Some(4))?;
    let mut total = 0.0;
    for (g, it) in outputs.iter().zip(items) {
        total += evaluate(g, &it.reference, rouge).mean_f1()?;
    }
    Ok(total / items.len() as f64)
}

/// Validation metric for any checkpoint kind.
pub fn evaluate_epoch(
    ck: &Checkpoint,
    corpus: &Corpus,
    split: SplitName,
    budget: usize,
    rouge: &RougeConfig,
) -> Result<f64> {
    if corpus.instances(split).is_empty() {
        return Err(Error::invalid(format!("split {} is empty", split.as_str())));
    }
    if ck.kind.is_summarizer() {
        summarizer_metric(ck, &meeting_items(corpus, split), rouge)
    } else {
        extractor_recall(ck, corpus, split, budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Model, ModelConfig, ParamLayout};

    fn setup() -> (Checkpoint, Vec<Example>) {
        let vocab = Vocab::build(["a b c d"].iter(), 1, None);
        let model = Model::init(ModelConfig::tiny(vocab.len(), 8), ParamLayout::seq2seq(), 0).unwrap();
        let mut ck = Checkpoint::new(ModelKind::SummarizerDense, model, vocab).unwrap();
        ck.settings = serde_json::to_value(SummarizerSettings::new(3, 4)).unwrap();
        let ex = vec![Example::Seq2Seq {
            segments: vec![crate::nn::EncoderInput::with_query(&[8], 3, &[9, 10])],
            target: vec![9, 2],
        }];
        (ck, ex)
    }

    #[test]
    fn selects_earliest_maximum_and_records_provenance() {
        let (ck, ex) = setup();
        let mut run = TrainRun::new(ModelKind::SummarizerDense, "toy");
        run.epochs = 4;
        run.accumulation_steps = 1;
        let scores = [0.2, 0.7, 0.7, 0.1];
        let mut i = 0;
        let mut eval = |_: &Checkpoint| {
            i += 1;
            Ok(scores[i - 1])
        };
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("run.jsonl");
        let o = train(&run, ck, &ex, &mut eval, Some(&log_path)).unwrap();
        assert_eq!(o.selected_epoch, 2);
        assert_eq!(o.checkpoint.selection_metric, Some(0.7));
        assert_eq!(
            o.checkpoint.provenance,
            vec![ProvenanceStage {
                dataset: "toy".into(),
                epochs: 4
            }]
        );
        assert_eq!(std::fs::read_to_string(&log_path).unwrap().lines().count(), 4);
    }

    #[test]
    fn chain_checks_vocab_and_kind() {
        let (ck, ex) = setup();
        let mut run = TrainRun::new(ModelKind::SummarizerDense, "s1");
        run.epochs = 1;
        let other = Vocab::build(["z"].iter(), 1, None);
        let stage = |vocab| Stage {
            run: run.clone(),
            examples: ex.clone(),
            evaluate: Box::new(|_| Ok(0.0)),
            vocab,
        };
        assert!(matches!(
            transfer_chain(ck.clone(), vec![stage(Some(other))]),
            Err(Error::Incompatible(_))
        ));
        let out = transfer_chain(ck.clone(), vec![stage(None), stage(Some(ck.vocab.clone()))]).unwrap();
        assert_eq!(out.last().unwrap().checkpoint.provenance.len(), 2);
        let wrong = TrainRun {
            kind: ModelKind::ExtractorSingle,
            ..run.clone()
        };
        assert!(train(&wrong, ck, &ex, &mut |_| Ok(0.0), None).is_err());
    }
}
