//! QFS corpora: meetings (ordered utterances) and query instances with gold
//! utterance spans.
//!
//! On-disk layout is a directory of line-delimited JSON files:
//!
//! ```text
//! meetings.jsonl     {"meeting_id": .., "utterances": [{"speaker": .., "text": ..}, ..]}
//! train.jsonl        {"query_id": .., "meeting_id": .., "query": .., "summary": .., "gold_spans": [[s, e], ..]}
//! validation.jsonl
//! test.jsonl
//! ```
//!
//! Gold spans are half-open utterance-index ranges. Non-dialogue sources are
//! stored as single-speaker meetings.

mod qmsum;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use qmsum::load_qmsum;
pub use synth::{synth_corpus, SynthSpec, SynthTask};

pub const MEETINGS_FILE: &str = "meetings.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(skip)]
    pub index: usize,
    pub speaker: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meeting {
    pub meeting_id: String,
    pub utterances: Vec<Utterance>,
}

impl Meeting {
    pub fn new(meeting_id: impl Into<String>, utterances: Vec<(String, String)>) -> Self {
        Meeting {
            meeting_id: meeting_id.into(),
            utterances: utterances
                .into_iter()
                .enumerate()
                .map(|(index, (speaker, text))| Utterance { index, speaker, text })
                .collect(),
        }
    }

    fn reindex(&mut self) {
        for (i, u) in self.utterances.iter_mut().enumerate() {
            u.index = i;
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::Validation(format!(
                "meeting {} has no utterances",
                self.meeting_id
            )));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.index != i {
                return Err(Error::Validation(format!(
                    "meeting {}: utterance index {} at position {i}",
                    self.meeting_id, u.index
                )));
            }
            if u.text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "meeting {}: utterance {i} has empty text",
                    self.meeting_id
                )));
            }
        }
        Ok(())
    }
}

/// Half-open utterance-index range `[start, end)`, serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct UtteranceSpan {
    pub start: usize,
    pub end: usize,
}

impl UtteranceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        UtteranceSpan { start, end }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<(usize, usize)> for UtteranceSpan {
    fn from((start, end): (usize, usize)) -> Self {
        UtteranceSpan { start, end }
    }
}

impl From<UtteranceSpan> for (usize, usize) {
    fn from(s: UtteranceSpan) -> Self {
        (s.start, s.end)
    }
}

/// Collapses a set of utterance indices into sorted, maximal half-open runs.
pub fn spans_from_indices(indices: &[usize]) -> Vec<UtteranceSpan> {
    let mut sorted: Vec<usize> = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut spans: Vec<UtteranceSpan> = Vec::new();
    for i in sorted {
        match spans.last_mut() {
            Some(last) if last.end == i => last.end = i + 1,
            _ => spans.push(UtteranceSpan::new(i, i + 1)),
        }
    }
    spans
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub query_id: String,
    pub meeting_id: String,
    pub query: String,
    #[serde(rename = "summary")]
    pub reference_summary: String,
    #[serde(default)]
    pub gold_spans: Vec<UtteranceSpan>,
    /// Opaque query-type tag (e.g. QMSum's general/specific), carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_type: Option<String>,
}

impl QueryInstance {
    /// Sorted, de-duplicated utterance indices covered by the gold spans.
    pub fn gold_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.gold_spans.iter().flat_map(|s| s.start..s.end).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn is_gold(&self, utterance_index: usize) -> bool {
        self.gold_spans.iter().any(|s| s.contains(utterance_index))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" | "dev" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub instances: Vec<QueryInstance>,
}

/// Validated meetings plus their query splits. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    meetings: Vec<Meeting>,
    by_id: BTreeMap<String, usize>,
    splits: Vec<DatasetSplit>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// The native line-delimited layout described in the module docs.
    Jsonl,
    /// Released QMSum `jsonl/{train,val,test}.jsonl` files (one meeting per line).
    Qmsum,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "qmsum" => Ok(DatasetFormat::Qmsum),
            other => Err(Error::invalid(format!("unknown dataset format '{other}'"))),
        }
    }
}

impl Corpus {
    /// Builds a corpus and enforces every structural invariant.
    pub fn new(mut meetings: Vec<Meeting>, splits: Vec<DatasetSplit>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, m) in meetings.iter_mut().enumerate() {
            m.reindex();
            m.validate()?;
            if by_id.insert(m.meeting_id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate meeting_id {}", m.meeting_id)));
            }
        }
        let corpus = Corpus {
            meetings,
            by_id,
            splits,
        };
        for split in &corpus.splits {
            corpus.validate_split(split)?;
        }
        Ok(corpus)
    }

    fn validate_split(&self, split: &DatasetSplit) -> Result<()> {
        let mut seen = HashSet::new();
        for inst in &split.instances {
            if !seen.insert(inst.query_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate query_id {} in split {}",
                    inst.query_id, split.name
                )));
            }
            self.validate_instance(inst)?;
        }
        Ok(())
    }

    fn validate_instance(&self, inst: &QueryInstance) -> Result<()> {
        let meeting = self.meeting(&inst.meeting_id).ok_or_else(|| {
            Error::Integrity(format!(
                "query {} references unknown meeting {}",
                inst.query_id, inst.meeting_id
            ))
        })?;
        for span in &inst.gold_spans {
            if span.start >= span.end || span.end > meeting.len() {
                return Err(Error::Validation(format!(
                    "query {}: gold span [{}, {}) outside meeting {} with {} utterances",
                    inst.query_id,
                    span.start,
                    span.end,
                    meeting.meeting_id,
                    meeting.len()
                )));
            }
        }
        Ok(())
    }

    pub fn meetings(&self) -> &[Meeting] {
        &self.meetings
    }

    pub fn meeting(&self, id: &str) -> Option<&Meeting> {
        self.by_id.get(id).map(|&i| &self.meetings[i])
    }

    pub fn splits(&self) -> &[DatasetSplit] {
        &self.splits
    }

    pub fn split(&self, name: SplitName) -> Option<&DatasetSplit> {
        self.splits.iter().find(|s| s.name == name)
    }

    /// Instances of a split, empty when the split is absent.
    pub fn instances(&self, name: SplitName) -> &[QueryInstance] {
        self.split(name).map_or(&[], |s| &s.instances)
    }

    /// Instance together with its meeting.
    pub fn pairs(&self, name: SplitName) -> impl Iterator<Item = (&QueryInstance, &Meeting)> {
        self.instances(name).iter().map(move |inst| {
            let m = self.meeting(&inst.meeting_id).expect("validated reference");
            (inst, m)
        })
    }

    /// Writes the corpus in the native layout. Output is deterministic.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(MEETINGS_FILE), &self.meetings)?;
        for split in &self.splits {
            write_jsonl(&dir.join(split.name.file_name()), &split.instances)?;
        }
        Ok(())
    }
}

/// Loads and validates a corpus. For [`DatasetFormat::Jsonl`], split files
/// that do not exist are treated as absent splits.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Corpus> {
    match format {
        DatasetFormat::Jsonl => load_jsonl_dir(path),
        DatasetFormat::Qmsum => load_qmsum(path),
    }
}

fn load_jsonl_dir(dir: &Path) -> Result<Corpus> {
    let meetings: Vec<Meeting> = read_jsonl(&dir.join(MEETINGS_FILE))?;
    let mut splits = Vec::new();
    for name in SplitName::ALL {
        let p = dir.join(name.file_name());
        if p.exists() {
            splits.push(DatasetSplit {
                name,
                instances: read_jsonl(&p)?,
            });
        }
    }
    Corpus::new(meetings, splits)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
