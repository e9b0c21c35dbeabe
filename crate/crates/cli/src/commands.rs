use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};

use qfsum::corpus::{
    load_dataset, read_jsonl, synth_corpus, write_jsonl, Corpus, DatasetFormat, SplitName, SynthSpec, SynthTask,
    MEETINGS_FILE,
};
use qfsum::eval::{
    extractor_eval_row, render_report, span_overlap, summarizer_eval, summary_record, ReportFormat, ReportRows,
    ScoreField,
};
use qfsum::extractors::{from_records, lead_scores, oracle_scores, rank_and_truncate, RankRecord, Scorer};
use qfsum::nn::{AttentionWindow, Checkpoint, ModelConfig, ModelKind};
use qfsum::relevance::{binary_labels, regression_targets, RelevanceRecord};
use qfsum::rouge::RougeConfig;
use qfsum::segenc::SegEncConfig;
use qfsum::segmenter::utterance_passages;
use qfsum::summarizer::{summarize, SummarizerSettings};
use qfsum::train::{
    corpus_vocab, extractor_examples, extractor_ranking, extractor_recall, meeting_items, new_extractor,
    new_summarizer, summarizer_examples, summarizer_metric, train, transfer_chain, Stage, SummaryItem, TrainRun,
};

use crate::manifest::{hash_inputs, RunManifest, MANIFEST_FILE};
use crate::*;

const MODEL_FILE: &str = "model.ckpt";
const LOG_FILE: &str = "train_log.jsonl";
const RANKINGS_FILE: &str = "rankings.jsonl";
const EXTRACTS_FILE: &str = "extracts.jsonl";
const SUMMARIES_FILE: &str = "summaries.jsonl";

/// Budgeted extract of one query, as written by `rank`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub query_id: String,
    pub meeting_id: String,
    pub split: SplitName,
    /// Extract tokens with `[SEP]` between passages.
    pub source: Vec<String>,
    pub utterance_indices: Vec<usize>,
    pub token_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub query_id: String,
    pub generated: String,
    pub reference: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SpanRecord {
    model: String,
    query_id: String,
    precision: f64,
    recall: f64,
}

struct Ctx {
    seed: u64,
    config: Option<PathBuf>,
    argv: Vec<String>,
}

impl Ctx {
    fn manifest<T: Serialize>(
        &self,
        command: &str,
        args: &T,
        inputs: &[&Path],
        artifacts: Vec<PathBuf>,
        path: &Path,
    ) -> anyhow::Result<()> {
        RunManifest {
            command: command.to_owned(),
            argv: self.argv.clone(),
            config_file: self.config.clone(),
            resolved_config: serde_json::json!({ "seed": self.seed, "args": args }),
            inputs: hash_inputs(inputs)?,
            seed: self.seed,
            artifacts,
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
        .write(path)
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        config: cli.config,
        argv,
    };
    match cli.command {
        Cmd::Prepare(a) => prepare(&ctx, a),
        Cmd::BuildTargets(a) => build_targets(&ctx, a),
        Cmd::TrainExtractor(a) => train_extractor(&ctx, a),
        Cmd::TrainSummarizer(a) => train_summarizer(&ctx, a),
        Cmd::Rank(a) => rank(&ctx, a),
        Cmd::Summarize(a) => summarize_cmd(&ctx, a),
        Cmd::Evaluate(a) => evaluate(&ctx, a),
        Cmd::Transfer(a) => transfer(&ctx, a),
        Cmd::Report(a) => report(&ctx, a),
    }
}

fn load_corpus(dir: &Path) -> anyhow::Result<Corpus> {
    load_dataset(dir, DatasetFormat::Jsonl).with_context(|| format!("loading corpus {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn model_config(
    m: &ModelArgs,
    vocab_size: usize,
    max_positions: usize,
    dec_layers: usize,
) -> anyhow::Result<ModelConfig> {
    let mut cfg = ModelConfig::tiny(vocab_size, max_positions);
    cfg.d_model = m.d_model;
    cfg.n_heads = m.heads;
    cfg.n_enc_layers = m.enc_layers;
    cfg.n_dec_layers = dec_layers;
    cfg.d_ff = m.ff;
    cfg.dropout_rate = m.dropout;
    cfg.validate()?;
    Ok(cfg)
}

fn train_run(kind: ModelKind, dataset: String, t: &TrainArgs, epochs: usize, seed: u64) -> TrainRun {
    let mut run = TrainRun::new(kind, dataset);
    run.epochs = epochs;
    run.seed = seed;
    run.learning_rate = t.lr;
    run.batch_size = t.batch_size;
    run.accumulation_steps = t.accumulation_steps;
    run
}

fn init_checkpoint(path: &Path, kind: ModelKind) -> anyhow::Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    ensure!(
        ck.kind == kind,
        qfsum::Error::Incompatible(format!(
            "--init is a {} checkpoint, expected {}",
            ck.kind.as_str(),
            kind.as_str()
        ))
    );
    Ok(ck)
}

fn prepare(ctx: &Ctx, a: PrepareArgs) -> anyhow::Result<()> {
    let artifacts: Vec<PathBuf> = std::iter::once(MEETINGS_FILE.to_owned())
        .chain(SplitName::ALL.iter().map(|s| s.file_name()))
        .map(|f| a.out.join(f))
        .collect();
    let inputs: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
    ctx.manifest("prepare", &a, &inputs, artifacts, &a.out.join(MANIFEST_FILE))?;
    let corpus = match &a.input {
        None => {
            let spec = SynthSpec {
                meetings: a.meetings,
                queries_per_meeting: a.queries_per_meeting,
                task: match a.task {
                    TaskArg::Meeting => SynthTask::Meeting,
                    TaskArg::Document => SynthTask::Document,
                },
                ..SynthSpec::default()
            };
            synth_corpus(ctx.seed, &spec)?
        }
        Some(input) => {
            let format = match a.format {
                DatasetFormatArg::Jsonl => DatasetFormat::Jsonl,
                DatasetFormatArg::Qmsum => DatasetFormat::Qmsum,
            };
            load_dataset(input, format).with_context(|| format!("loading {}", input.display()))?
        }
    };
    corpus.save(&a.out)?;
    let counts: Vec<String> = SplitName::ALL
        .iter()
        .map(|&s| format!("{}={}", s, corpus.instances(s).len()))
        .collect();
    println!("{} meetings; queries {}", corpus.meetings().len(), counts.join(" "));
    Ok(())
}

fn build_targets(ctx: &Ctx, a: BuildTargetsArgs) -> anyhow::Result<()> {
    let path = a.out.join("targets.jsonl");
    ctx.manifest(
        "build-targets",
        &a,
        &[&a.corpus],
        vec![path.clone()],
        &a.out.join(MANIFEST_FILE),
    )?;
    let corpus = load_corpus(&a.corpus)?;
    let rouge = RougeConfig::default();
    let mut records = Vec::new();
    for (inst, meeting) in corpus.pairs(a.split) {
        let passages = utterance_passages(meeting);
        let examples = match a.mode {
            TargetMode::Regression => regression_targets(inst, &passages, &rouge)?,
            TargetMode::Binary => {
                let n_neg = a.negatives.min(passages.len().saturating_sub(a.positives));
                if n_neg == 0 {
                    continue;
                }
                binary_labels(inst, &passages, a.positives, n_neg, ctx.seed, &rouge)?
            }
        };
        records.extend(examples.iter().map(RelevanceRecord::from));
    }
    write_jsonl(&path, &records)?;
    println!("{} targets for split {}", records.len(), a.split);
    Ok(())
}

fn train_extractor(ctx: &Ctx, mut a: TrainExtractorArgs) -> anyhow::Result<()> {
    let kind = match a.kind {
        ExtractorKindArg::Relreg => ModelKind::ExtractorSingle,
        ExtractorKindArg::Relregtt => ModelKind::ExtractorDual,
        ExtractorKindArg::Dpr => ModelKind::ExtractorDpr,
    };
    let max_positions = *a.model.max_positions.get_or_insert(64);
    let mut inputs: Vec<&Path> = vec![&a.corpus];
    inputs.extend(a.train.init.as_deref());
    let artifacts = vec![a.out.join(MODEL_FILE), a.out.join(LOG_FILE)];
    ctx.manifest("train-extractor", &a, &inputs, artifacts, &a.out.join(MANIFEST_FILE))?;

    let corpus = load_corpus(&a.corpus)?;
    let ck = match &a.train.init {
        Some(p) => init_checkpoint(p, kind)?,
        None => {
            let vocab = corpus_vocab(&[&corpus], a.model.min_count, None);
            let cfg = model_config(&a.model, vocab.len(), max_positions, 0)?;
            new_extractor(kind, vocab, cfg, ctx.seed)?
        }
    };
    let examples = extractor_examples(&ck, &corpus, SplitName::Train, ctx.seed, &RougeConfig::default())?;
    let run = train_run(kind, dataset_name(&a.corpus), &a.train, a.train.epochs, ctx.seed);
    let (select, budget) = (a.select, a.budget);
    let mut evaluate = |ck: &Checkpoint| match select {
        SelectMetric::Mrr => Ok(extractor_ranking(ck, &corpus, SplitName::Validation)?.mrr),
        SelectMetric::Recall => extractor_recall(ck, &corpus, SplitName::Validation, budget),
    };
    let outcome = train(&run, ck, &examples, &mut evaluate, Some(&a.out.join(LOG_FILE)))?;
    outcome.checkpoint.save(&a.out.join(MODEL_FILE))?;
    println!(
        "{} examples; selected epoch {} with validation {:?} {:.4}",
        examples.len(),
        outcome.selected_epoch,
        select,
        outcome.checkpoint.selection_metric.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_extracts(dir: &Path) -> anyhow::Result<BTreeMap<String, ExtractRecord>> {
    let records: Vec<ExtractRecord> = read_jsonl(&dir.join(EXTRACTS_FILE))?;
    Ok(records.into_iter().map(|r| (r.query_id.clone(), r)).collect())
}

/// Summarization items of a split, from whole meetings or from extracts.
fn items_for(
    corpus: &Corpus,
    split: SplitName,
    extracts: Option<&BTreeMap<String, ExtractRecord>>,
) -> anyhow::Result<Vec<SummaryItem>> {
    let Some(ex) = extracts else {
        return Ok(meeting_items(corpus, split));
    };
    corpus
        .instances(split)
        .iter()
        .map(|inst| {
            let r = ex.get(&inst.query_id).ok_or_else(|| {
                qfsum::Error::Validation(format!("no extract for query {} (split {split})", inst.query_id))
            })?;
            Ok(SummaryItem {
                query_id: inst.query_id.clone(),
                query: inst.query.clone(),
                source: r.source.clone(),
                reference: inst.reference_summary.clone(),
            })
        })
        .collect()
}

fn summarizer_kind(k: SummarizerKindArg) -> ModelKind {
    match k {
        SummarizerKindArg::Dense => ModelKind::SummarizerDense,
        SummarizerKindArg::Segenc => ModelKind::SummarizerSegenc,
        SummarizerKindArg::Localglobal => ModelKind::SummarizerLocalglobal,
    }
}

/// Fresh summarizer checkpoint for the flags; fills in `max_positions`.
fn fresh_summarizer(
    ctx: &Ctx,
    s: &SummarizerArgs,
    m: &ModelArgs,
    vocab: qfsum::nn::Vocab,
) -> anyhow::Result<Checkpoint> {
    let kind = summarizer_kind(s.kind);
    let max_positions = m.max_positions.expect("resolved before use");
    let mut settings = SummarizerSettings::new(s.query_budget, s.max_target_len);
    settings.beams = s.beams;
    settings.length_penalty = s.length_penalty;
    let mut cfg = model_config(m, vocab.len(), max_positions, m.dec_layers)?;
    match kind {
        ModelKind::SummarizerSegenc => {
            settings.segenc = Some(SegEncConfig {
                max_input_tokens: s.max_input_tokens,
                segment_length: s.segment_length,
                overlap_fraction: s.overlap,
                query_budget: s.query_budget,
            });
        }
        ModelKind::SummarizerLocalglobal => {
            cfg.attention_window = AttentionWindow::Local(s.window);
            cfg.global_query_attention = true;
        }
        _ => {}
    }
    Ok(new_summarizer(kind, vocab, cfg, settings, ctx.seed)?)
}

fn resolve_summarizer_positions(s: &SummarizerArgs, m: &mut ModelArgs) {
    let default = match s.kind {
        SummarizerKindArg::Segenc => s.segment_length + s.query_budget,
        _ => 256,
    };
    m.max_positions.get_or_insert(default);
}

fn limited(mut items: Vec<SummaryItem>, limit: Option<usize>) -> Vec<SummaryItem> {
    if let Some(n) = limit {
        items.truncate(n);
    }
    items
}

fn train_summarizer(ctx: &Ctx, mut a: TrainSummarizerArgs) -> anyhow::Result<()> {
    resolve_summarizer_positions(&a.summarizer, &mut a.model);
    let kind = summarizer_kind(a.summarizer.kind);
    let mut inputs: Vec<&Path> = vec![&a.corpus];
    inputs.extend(a.extracts.as_deref());
    inputs.extend(a.train.init.as_deref());
    let artifacts = vec![a.out.join(MODEL_FILE), a.out.join(LOG_FILE)];
    ctx.manifest("train-summarizer", &a, &inputs, artifacts, &a.out.join(MANIFEST_FILE))?;

    let corpus = load_corpus(&a.corpus)?;
    let extracts = a.extracts.as_deref().map(load_extracts).transpose()?;
    let train_items = items_for(&corpus, SplitName::Train, extracts.as_ref())?;
    let val_items = limited(
        items_for(&corpus, SplitName::Validation, extracts.as_ref())?,
        a.summarizer.val_limit,
    );
    ensure!(
        !val_items.is_empty(),
        qfsum::Error::Validation("validation split is empty".into())
    );
    let ck = match &a.train.init {
        Some(p) => init_checkpoint(p, kind)?,
        None => fresh_summarizer(
            ctx,
            &a.summarizer,
            &a.model,
            corpus_vocab(&[&corpus], a.model.min_count, None),
        )?,
    };
    let examples = summarizer_examples(&ck, &train_items)?;
    let run = train_run(kind, dataset_name(&a.corpus), &a.train, a.train.epochs, ctx.seed);
    let rouge = RougeConfig::default();
    let mut evaluate = |ck: &Checkpoint| summarizer_metric(ck, &val_items, &rouge);
    let outcome = train(&run, ck, &examples, &mut evaluate, Some(&a.out.join(LOG_FILE)))?;
    outcome.checkpoint.save(&a.out.join(MODEL_FILE))?;
    println!(
        "{} examples; selected epoch {} with validation mean ROUGE F1 {:.4}",
        examples.len(),
        outcome.selected_epoch,
        outcome.checkpoint.selection_metric.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn rank(ctx: &Ctx, a: RankArgs) -> anyhow::Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.corpus];
    inputs.extend(a.checkpoint.as_deref());
    let artifacts = vec![a.out.join(RANKINGS_FILE), a.out.join(EXTRACTS_FILE)];
    ctx.manifest("rank", &a, &inputs, artifacts, &a.out.join(MANIFEST_FILE))?;

    let corpus = load_corpus(&a.corpus)?;
    let ck = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let scorer = match (&a.extractor, &ck) {
        (ExtractorSource::Checkpoint, Some(ck)) => Some(Scorer::new(ck)?),
        (ExtractorSource::Checkpoint, None) => bail!(qfsum::Error::Validation("--checkpoint is required".into())),
        _ => None,
    };
    let mut records = Vec::new();
    let mut extracts = Vec::new();
    for &split in &a.split {
        for (inst, meeting) in corpus.pairs(split) {
            let passages = utterance_passages(meeting);
            if passages.is_empty() {
                continue;
            }
            let ranked = match a.extractor {
                ExtractorSource::Lead => lead_scores(&passages),
                ExtractorSource::Oracle => oracle_scores(inst, &passages)?,
                ExtractorSource::Checkpoint => scorer.as_ref().expect("scorer").rank(&inst.query, &passages)?,
            };
            records.extend(ranked.records(&inst.query_id));
            let ex = rank_and_truncate(&ranked, a.budget)?;
            extracts.push(ExtractRecord {
                query_id: inst.query_id.clone(),
                meeting_id: inst.meeting_id.clone(),
                split,
                source: ex.model_tokens(),
                utterance_indices: ex.utterance_indices(),
                token_count: ex.token_count(),
            });
        }
    }
    write_jsonl(&a.out.join(RANKINGS_FILE), &records)?;
    write_jsonl(&a.out.join(EXTRACTS_FILE), &extracts)?;
    println!("ranked {} queries", extracts.len());
    Ok(())
}

fn summarize_cmd(ctx: &Ctx, a: SummarizeArgs) -> anyhow::Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.corpus, &a.checkpoint];
    inputs.extend(a.extracts.as_deref());
    let path = a.out.join(SUMMARIES_FILE);
    ctx.manifest("summarize", &a, &inputs, vec![path.clone()], &a.out.join(MANIFEST_FILE))?;

    let corpus = load_corpus(&a.corpus)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let mut settings = SummarizerSettings::from_checkpoint(&ck)?;
    if let Some(b) = a.beams {
        ensure!(b >= 1, qfsum::Error::Validation("--beams must be >= 1".into()));
        settings.beams = b;
    }
    let extracts = a.extracts.as_deref().map(load_extracts).transpose()?;
    let items = limited(items_for(&corpus, a.split, extracts.as_ref())?, a.limit);
    let mut out = Vec::with_capacity(items.len());
    for it in &items {
        out.push(SummaryOutput {
            query_id: it.query_id.clone(),
            generated: summarize(&ck, &settings, &it.query, &it.source)?,
            reference: it.reference.clone(),
        });
    }
    write_jsonl(&path, &out)?;
    println!("wrote {} summaries", out.len());
    Ok(())
}

fn write_tables(out: &Path, stem: &str, rows: &ReportRows, field: ScoreField) -> anyhow::Result<String> {
    std::fs::write(
        out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(rows)? + "\n",
    )?;
    std::fs::write(
        out.join(format!("{stem}.csv")),
        render_report(rows, ReportFormat::Csv, field)?,
    )?;
    let md = render_report(rows, ReportFormat::Markdown, field)?;
    std::fs::write(out.join(format!("{stem}.md")), &md)?;
    Ok(md)
}

fn score_field(f: FieldArg) -> ScoreField {
    match f {
        FieldArg::F1 => ScoreField::F1,
        FieldArg::Recall => ScoreField::Recall,
    }
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> anyhow::Result<()> {
    ensure!(
        !a.rankings.is_empty() || !a.summaries.is_empty(),
        qfsum::Error::Validation("nothing to evaluate: pass --rankings and/or --summaries".into())
    );
    let mut inputs: Vec<&Path> = vec![&a.corpus];
    let ranking_files: Vec<PathBuf> = a.rankings.iter().map(|(_, p)| p.join(RANKINGS_FILE)).collect();
    let summary_files: Vec<PathBuf> = a.summaries.iter().map(|(_, p)| p.join(SUMMARIES_FILE)).collect();
    inputs.extend(ranking_files.iter().map(PathBuf::as_path));
    inputs.extend(summary_files.iter().map(PathBuf::as_path));
    let mut artifacts = Vec::new();
    if !a.rankings.is_empty() {
        artifacts.extend(["table1.json", "table1.csv", "table1.md"].map(|f| a.out.join(f)));
        if a.span_overlap {
            artifacts.push(a.out.join("span_overlap.jsonl"));
        }
    }
    if !a.summaries.is_empty() {
        artifacts.extend(["table5.json", "table5.csv", "table5.md"].map(|f| a.out.join(f)));
        artifacts.extend(
            a.summaries
                .iter()
                .map(|(n, _)| a.out.join(format!("records_{n}.jsonl"))),
        );
    }
    ctx.manifest("evaluate", &a, &inputs, artifacts, &a.out.join(MANIFEST_FILE))?;

    let corpus = load_corpus(&a.corpus)?;
    let rouge = RougeConfig::default();
    let field = score_field(a.field);

    if !a.rankings.is_empty() {
        let mut rows = Vec::new();
        let mut spans = Vec::new();
        for ((name, _), file) in a.rankings.iter().zip(&ranking_files) {
            let mut by_query: BTreeMap<String, Vec<RankRecord>> = BTreeMap::new();
            for r in read_jsonl::<RankRecord>(file)? {
                by_query.entry(r.query_id.clone()).or_default().push(r);
            }
            let mut items = Vec::new();
            for (inst, meeting) in corpus.pairs(a.split) {
                let recs = by_query.get(&inst.query_id).ok_or_else(|| {
                    qfsum::Error::Validation(format!("{name}: no ranking for query {}", inst.query_id))
                })?;
                items.push((from_records(&utterance_passages(meeting), recs)?, inst));
            }
            for &k in &a.topk {
                rows.push(extractor_eval_row(name, k, &items, a.budget, &rouge)?);
            }
            if a.span_overlap {
                let (mut p, mut r) = (0.0, 0.0);
                for (ranked, inst) in &items {
                    let so = span_overlap(ranked, inst, a.budget)?;
                    p += so.precision;
                    r += so.recall;
                    spans.push(SpanRecord {
                        model: name.clone(),
                        query_id: inst.query_id.clone(),
                        precision: so.precision,
                        recall: so.recall,
                    });
                }
                let n = items.len().max(1) as f64;
                println!(
                    "span overlap {name} @{}: precision {:.4} recall {:.4}",
                    a.budget,
                    p / n,
                    r / n
                );
            }
        }
        if a.span_overlap {
            write_jsonl(&a.out.join("span_overlap.jsonl"), &spans)?;
        }
        print!(
            "{}",
            write_tables(&a.out, "table1", &ReportRows::Extractor(rows), field)?
        );
    }

    if !a.summaries.is_empty() {
        let references: BTreeMap<&str, &str> = corpus
            .instances(a.split)
            .iter()
            .map(|i| (i.query_id.as_str(), i.reference_summary.as_str()))
            .collect();
        let mut rows = Vec::new();
        for ((name, _), file) in a.summaries.iter().zip(&summary_files) {
            let outputs: Vec<SummaryOutput> = read_jsonl(file)?;
            for o in &outputs {
                ensure!(
                    references.get(o.query_id.as_str()) == Some(&o.reference.as_str()),
                    qfsum::Error::Validation(format!(
                        "{name}: query {} is not in split {} or its reference differs",
                        o.query_id, a.split
                    ))
                );
            }
            let records: Vec<_> = outputs
                .iter()
                .map(|o| summary_record(&o.query_id, &o.generated, &o.reference, &rouge))
                .collect();
            write_jsonl(&a.out.join(format!("records_{name}.jsonl")), &records)?;
            let pairs: Vec<(String, String)> = outputs.into_iter().map(|o| (o.generated, o.reference)).collect();
            rows.push(summarizer_eval(name, &pairs, &rouge)?);
        }
        print!("{}", write_tables(&a.out, "table5", &ReportRows::Summary(rows), field)?);
    }
    Ok(())
}

fn transfer(ctx: &Ctx, mut a: TransferArgs) -> anyhow::Result<()> {
    resolve_summarizer_positions(&a.summarizer, &mut a.model);
    let kind = summarizer_kind(a.summarizer.kind);
    let n = a.stages.len();
    if a.stage_epochs.is_empty() {
        a.stage_epochs = vec![a.train.epochs; n];
    }
    ensure!(
        a.stage_epochs.len() == n,
        qfsum::Error::Validation(format!("{} --stage-epochs values for {n} stages", a.stage_epochs.len()))
    );
    let mut inputs: Vec<&Path> = a.stages.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.train.init.as_deref());
    let mut artifacts: Vec<PathBuf> = (1..=n).map(|i| a.out.join(format!("stage{i}.ckpt"))).collect();
    artifacts.push(a.out.join(MODEL_FILE));
    artifacts.push(a.out.join(LOG_FILE));
    ctx.manifest("transfer", &a, &inputs, artifacts, &a.out.join(MANIFEST_FILE))?;

    let corpora: Vec<Corpus> = a.stages.iter().map(|d| load_corpus(d)).collect::<anyhow::Result<_>>()?;
    let refs: Vec<&Corpus> = corpora.iter().collect();
    let ck = match &a.train.init {
        Some(p) => init_checkpoint(p, kind)?,
        None => fresh_summarizer(
            ctx,
            &a.summarizer,
            &a.model,
            corpus_vocab(&refs, a.model.min_count, None),
        )?,
    };
    let rouge = RougeConfig::default();
    let val: Vec<Vec<SummaryItem>> = corpora
        .iter()
        .map(|c| limited(meeting_items(c, SplitName::Validation), a.summarizer.val_limit))
        .collect();
    let mut stages = Vec::with_capacity(n);
    for (i, c) in corpora.iter().enumerate() {
        ensure!(
            !val[i].is_empty(),
            qfsum::Error::Validation(format!("stage {} has no validation queries", a.stages[i].display()))
        );
        let items = &val[i];
        let rouge = &rouge;
        stages.push(Stage {
            run: train_run(kind, dataset_name(&a.stages[i]), &a.train, a.stage_epochs[i], ctx.seed),
            examples: summarizer_examples(&ck, &meeting_items(c, SplitName::Train))?,
            evaluate: Box::new(move |ck: &Checkpoint| summarizer_metric(ck, items, rouge)),
            vocab: None,
        });
    }
    let outcomes = transfer_chain(ck, stages)?;
    let mut log = File::create(a.out.join(LOG_FILE))?;
    for (i, o) in outcomes.iter().enumerate() {
        o.checkpoint.save(&a.out.join(format!("stage{}.ckpt", i + 1)))?;
        for e in &o.log {
            let mut v = serde_json::to_value(e)?;
            v["stage"] = serde_json::json!(i + 1);
            writeln!(log, "{v}")?;
        }
        println!(
            "stage {} ({}): selected epoch {} with validation mean ROUGE F1 {:.4}",
            i + 1,
            dataset_name(&a.stages[i]),
            o.selected_epoch,
            o.checkpoint.selection_metric.unwrap_or(f64::NAN)
        );
    }
    outcomes
        .last()
        .expect("non-empty chain")
        .checkpoint
        .save(&a.out.join(MODEL_FILE))?;
    Ok(())
}

fn report(ctx: &Ctx, a: ReportArgs) -> anyhow::Result<()> {
    let mut manifest = a.out.clone().into_os_string();
    manifest.push(".manifest.json");
    ctx.manifest("report", &a, &[&a.rows], vec![a.out.clone()], Path::new(&manifest))?;
    let text = std::fs::read_to_string(&a.rows).with_context(|| format!("reading {}", a.rows.display()))?;
    let rows: ReportRows =
        serde_json::from_str(&text).map_err(|e| qfsum::Error::Format(format!("{}: {e}", a.rows.display())))?;
    let format = match a.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Markdown => ReportFormat::Markdown,
    };
    let doc = render_report(&rows, format, score_field(a.field))?;
    std::fs::write(&a.out, &doc).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{doc}");
    Ok(())
}
