//! Extractor and summarizer evaluation tables.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::QueryInstance;
use crate::error::{Error, Result};
use crate::extractors::{rank_and_truncate, top_k_extract, Extract, RankedPassageList};
use crate::rouge::{evaluate, normalize, RougeConfig, RougeReport, RougeScore, RougeVariant};

pub const DEFAULT_BUDGET: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopK {
    K(usize),
    /// Every passage, truncated to the budget.
    All,
}

impl TopK {
    pub const TABLE: [TopK; 4] = [TopK::K(1), TopK::K(5), TopK::K(15), TopK::All];
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::K(k) => write!(f, "top-{k}"),
            TopK::All => f.write_str("all"),
        }
    }
}

impl FromStr for TopK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(TopK::All);
        }
        let n = s.trim_start_matches("top-");
        n.parse::<usize>()
            .ok()
            .filter(|&k| k > 0)
            .map(TopK::K)
            .ok_or_else(|| Error::invalid(format!("bad top-k {s:?}; expected a positive integer or \"all\"")))
    }
}

/// Which ROUGE component goes into reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreField {
    #[default]
    F1,
    Recall,
}

impl ScoreField {
    pub fn pick(self, s: &RougeScore) -> f64 {
        match self {
            ScoreField::F1 => s.f1,
            ScoreField::Recall => s.recall,
        }
    }
}

/// The extract a ranked list yields for a top-k setting.
pub fn extract_for(ranked: &RankedPassageList, topk: TopK, budget: usize) -> Result<Extract> {
    match topk {
        TopK::K(k) => Ok(top_k_extract(ranked, k)),
        TopK::All => rank_and_truncate(ranked, budget),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexicalOverlap {
    pub rouge: RougeReport,
    pub words: usize,
}

/// ROUGE of the top-k (or budgeted) extract against the reference summary.
pub fn extractor_lexical_overlap(
    ranked: &RankedPassageList,
    reference: &str,
    topk: TopK,
    budget: usize,
    config: &RougeConfig,
) -> Result<LexicalOverlap> {
    if ranked.is_empty() {
        return Err(Error::invalid("empty ranked list"));
    }
    let text = extract_for(ranked, topk, budget)?.text();
    Ok(LexicalOverlap {
        rouge: evaluate(&text, reference, config),
        words: normalize(&text, &RougeConfig::plain()).len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanOverlap {
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall of utterance indices in an extract (partial utterances
/// count as included) against gold indices. Empty denominators give 0.
pub fn span_overlap_of(extract: &Extract, gold: &[usize]) -> SpanOverlap {
    let s: BTreeSet<usize> = extract.utterance_indices().into_iter().collect();
    let g: BTreeSet<usize> = gold.iter().copied().collect();
    let hit = s.intersection(&g).count() as f64;
    SpanOverlap {
        precision: if s.is_empty() { 0.0 } else { hit / s.len() as f64 },
        recall: if g.is_empty() { 0.0 } else { hit / g.len() as f64 },
    }
}

pub fn span_overlap(ranked: &RankedPassageList, instance: &QueryInstance, budget: usize) -> Result<SpanOverlap> {
    Ok(span_overlap_of(
        &rank_and_truncate(ranked, budget)?,
        &instance.gold_indices(),
    ))
}

/// Whether the top-ranked passage is a gold passage.
pub fn top1_hit(ranked: &RankedPassageList, instance: &QueryInstance) -> bool {
    ranked
        .items
        .first()
        .and_then(|it| it.passage.utterance_index())
        .is_some_and(|u| instance.is_gold(u))
}

/// 1 / rank of the first gold passage, 0 when none is ranked.
pub fn reciprocal_rank(ranked: &RankedPassageList, instance: &QueryInstance) -> f64 {
    ranked
        .items
        .iter()
        .position(|it| it.passage.utterance_index().is_some_and(|u| instance.is_gold(u)))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorEvalRow {
    pub model: String,
    pub topk: TopK,
    pub rouge: Vec<(RougeVariant, RougeScore)>,
    pub avg_words: f64,
    pub span_precision: f64,
    pub span_recall: f64,
}

fn mean_scores(reports: &[RougeReport], variants: &[RougeVariant]) -> Vec<(RougeVariant, RougeScore)> {
    let n = reports.len().max(1) as f64;
    variants
        .iter()
        .map(|&v| {
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for rep in reports {
                let s = rep.get(v).unwrap_or_default();
                p += s.precision;
                r += s.recall;
                f += s.f1;
            }
            (
                v,
                RougeScore {
                    precision: p / n,
                    recall: r / n,
                    f1: f / n,
                },
            )
        })
        .collect()
}

/// Table-1-style row averaged over `(ranked list, instance)` pairs. Span
/// overlap is computed on the same extract as ROUGE and skips instances
/// without gold spans.
pub fn extractor_eval_row(
    model: &str,
    topk: TopK,
    items: &[(RankedPassageList, &QueryInstance)],
    budget: usize,
    config: &RougeConfig,
) -> Result<ExtractorEvalRow> {
    if items.is_empty() {
        return Err(Error::invalid("no instances to evaluate"));
    }
    let mut reports = Vec::with_capacity(items.len());
    let (mut words, mut sp, mut sr, mut n_gold) = (0.0, 0.0, 0.0, 0usize);
    for (ranked, inst) in items {
        let lo = extractor_lexical_overlap(ranked, &inst.reference_summary, topk, budget, config)?;
        words += lo.words as f64;
        reports.push(lo.rouge);
        if !inst.gold_spans.is_empty() {
            let so = span_overlap_of(&extract_for(ranked, topk, budget)?, &inst.gold_indices());
            sp += so.precision;
            sr += so.recall;
            n_gold += 1;
        }
    }
    let g = n_gold.max(1) as f64;
    Ok(ExtractorEvalRow {
        model: model.to_owned(),
        topk,
        rouge: mean_scores(&reports, &config.variants),
        avg_words: words / items.len() as f64,
        span_precision: sp / g,
        span_recall: sr / g,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEvalRow {
    pub model: String,
    pub rouge: Vec<(RougeVariant, RougeScore)>,
    pub n_examples: usize,
}

/// Per-example dump line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub query_id: String,
    pub generated: String,
    pub reference: String,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

pub fn summary_record(query_id: &str, generated: &str, reference: &str, config: &RougeConfig) -> SummaryRecord {
    let rep = evaluate(generated, reference, config);
    SummaryRecord {
        query_id: query_id.to_owned(),
        generated: generated.to_owned(),
        reference: reference.to_owned(),
        r1: rep.f1(RougeVariant::Rouge1),
        r2: rep.f1(RougeVariant::Rouge2),
        rl: rep.f1(RougeVariant::RougeL),
    }
}

/// Mean per-variant scores over `(generated, reference)` pairs.
pub fn summarizer_eval(model: &str, outputs: &[(String, String)], config: &RougeConfig) -> Result<SummaryEvalRow> {
    if outputs.is_empty() {
        return Err(Error::invalid("summarizer_eval needs at least one output"));
    }
    let reports: Vec<RougeReport> = outputs.iter().map(|(g, r)| evaluate(g, r, config)).collect();
    Ok(SummaryEvalRow {
        model: model.to_owned(),
        rouge: mean_scores(&reports, &config.variants),
        n_examples: outputs.len(),
    })
}

/// Mean F1 across variants of a summary row.
pub fn row_mean_f1(row: &SummaryEvalRow) -> f64 {
    if row.rouge.is_empty() {
        return 0.0;
    }
    row.rouge.iter().map(|(_, s)| s.f1).sum::<f64>() / row.rouge.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

/// Rows of either table, for rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "table", content = "rows", rename_all = "snake_case")]
pub enum ReportRows {
    Extractor(Vec<ExtractorEvalRow>),
    Summary(Vec<SummaryEvalRow>),
}

fn variant_value(rouge: &[(RougeVariant, RougeScore)], v: RougeVariant, field: ScoreField) -> String {
    rouge
        .iter()
        .find(|(x, _)| *x == v)
        .map_or_else(String::new, |(_, s)| format!("{:.2}", 100.0 * field.pick(s)))
}

impl ReportRows {
    pub fn header(&self) -> Vec<&'static str> {
        match self {
            ReportRows::Extractor(_) => vec![
                "model",
                "topk",
                "R-1",
                "R-2",
                "R-L",
                "avg_words",
                "span_precision",
                "span_recall",
            ],
            ReportRows::Summary(_) => vec!["model", "R-1", "R-2", "R-L", "n_examples"],
        }
    }

    /// Cells with fixed formatting: ROUGE on a 0-100 scale, everything two
    /// decimals except counts.
    pub fn cells(&self, field: ScoreField) -> Vec<Vec<String>> {
        let rv = |r: &[(RougeVariant, RougeScore)]| {
            RougeVariant::ALL
                .iter()
                .map(|&v| variant_value(r, v, field))
                .collect::<Vec<_>>()
        };
        match self {
            ReportRows::Extractor(rows) => rows
                .iter()
                .map(|r| {
                    let mut c = vec![r.model.clone(), r.topk.to_string()];
                    c.extend(rv(&r.rouge));
                    c.push(format!("{:.2}", r.avg_words));
                    c.push(format!("{:.2}", r.span_precision));
                    c.push(format!("{:.2}", r.span_recall));
                    c
                })
                .collect(),
            ReportRows::Summary(rows) => rows
                .iter()
                .map(|r| {
                    let mut c = vec![r.model.clone()];
                    c.extend(rv(&r.rouge));
                    c.push(r.n_examples.to_string());
                    c
                })
                .collect(),
        }
    }
}

/// Renders rows as CSV or a markdown table. Pure in its inputs.
pub fn render_report(rows: &ReportRows, format: ReportFormat, field: ScoreField) -> Result<String> {
    let header = rows.header();
    let cells = rows.cells(field);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header)?;
            for c in &cells {
                w.write_record(c)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
        }
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n", header.join(" | "));
            out.push_str(&format!("|{}\n", header.iter().map(|_| "---|").collect::<String>()));
            for c in &cells {
                out.push_str(&format!("| {} |\n", c.join(" | ")));
            }
            Ok(out)
        }
    }
}
