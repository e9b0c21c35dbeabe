//! Adapter for the released QMSum JSONL layout (`train.jsonl`, `val.jsonl`,
//! `test.jsonl`, one meeting object per line).
//!
//! Mapping:
//! * `meeting_transcripts[i]` -> utterance `i` (`speaker`, `content`);
//! * `specific_query_list` entries keep their `relevant_text_span` pairs,
//!   which are inclusive string indices, as half-open `[s, e + 1)` spans;
//! * `general_query_list` entries have no spans and get an empty list;
//! * the list a query came from is preserved as `query_type`.
//!
//! Meeting ids are `<split>_<line>`. Utterances whose transcript content is
//! blank are replaced with a single `{blank}` marker so indices stay aligned
//! with the released spans.

use std::path::Path;

use serde::Deserialize;

use super::{read_jsonl, Corpus, DatasetSplit, Meeting, QueryInstance, SplitName, UtteranceSpan};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawMeeting {
    #[serde(default)]
    general_query_list: Vec<RawQuery>,
    #[serde(default)]
    specific_query_list: Vec<RawQuery>,
    meeting_transcripts: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    content: String,
}

#[derive(Deserialize)]
struct RawQuery {
    query: String,
    answer: String,
    #[serde(default)]
    relevant_text_span: Vec<Vec<serde_json::Value>>,
}

fn span_bound(v: &serde_json::Value) -> Result<usize> {
    match v {
        serde_json::Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("bad span bound '{s}'"))),
        serde_json::Value::Number(n) => n
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| Error::Validation(format!("bad span bound {n}"))),
        other => Err(Error::Validation(format!("bad span bound {other}"))),
    }
}

pub fn load_qmsum(dir: &Path) -> Result<Corpus> {
    let mut meetings = Vec::new();
    let mut splits = Vec::new();
    for (name, file) in [
        (SplitName::Train, "train.jsonl"),
        (SplitName::Validation, "val.jsonl"),
        (SplitName::Test, "test.jsonl"),
    ] {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let raw: Vec<RawMeeting> = read_jsonl(&path)?;
        let mut instances = Vec::new();
        for (line, m) in raw.into_iter().enumerate() {
            let meeting_id = format!("{}_{}", name.as_str(), line);
            let turns = m
                .meeting_transcripts
                .into_iter()
                .map(|t| {
                    let text = if t.content.trim().is_empty() {
                        "{blank}".to_owned()
                    } else {
                        t.content
                    };
                    (t.speaker, text)
                })
                .collect();
            meetings.push(Meeting::new(meeting_id.clone(), turns));
            let tagged = m
                .general_query_list
                .into_iter()
                .map(|q| ("general", q))
                .chain(m.specific_query_list.into_iter().map(|q| ("specific", q)));
            for (qi, (kind, q)) in tagged.enumerate() {
                let mut gold_spans = Vec::new();
                for pair in &q.relevant_text_span {
                    if pair.len() != 2 {
                        return Err(Error::Validation(format!(
                            "{meeting_id}: span must have two bounds, got {}",
                            pair.len()
                        )));
                    }
                    gold_spans.push(UtteranceSpan::new(span_bound(&pair[0])?, span_bound(&pair[1])? + 1));
                }
                instances.push(QueryInstance {
                    query_id: format!("{meeting_id}_q{qi}"),
                    meeting_id: meeting_id.clone(),
                    query: q.query,
                    reference_summary: q.answer,
                    gold_spans,
                    query_type: Some(kind.to_owned()),
                });
            }
        }
        splits.push(DatasetSplit { name, instances });
    }
    if meetings.is_empty() {
        return Err(Error::Validation(format!(
            "no QMSum split files found in {}",
            dir.display()
        )));
    }
    Corpus::new(meetings, splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converts_inclusive_string_spans() {
        let dir = tempfile::tempdir().unwrap();
        let line = serde_json::json!({
            "topic_list": [],
            "general_query_list": [{"query": "Summarize the meeting", "answer": "They met."}],
            "specific_query_list": [{
                "query": "What about the remote?",
                "answer": "It should be cheap.",
                "relevant_text_span": [["1", "2"]]
            }],
            "meeting_transcripts": [
                {"speaker": "PM", "content": "Hello."},
                {"speaker": "ID", "content": "The remote should be cheap."},
                {"speaker": "ME", "content": "Agreed, cheap."},
                {"speaker": "PM", "content": " "}
            ]
        });
        std::fs::write(dir.path().join("val.jsonl"), format!("{line}\n")).unwrap();
        let c = load_qmsum(dir.path()).unwrap();
        let v = c.instances(SplitName::Validation);
        assert_eq!(v.len(), 2);
        assert!(v[0].gold_spans.is_empty());
        assert_eq!(v[0].query_type.as_deref(), Some("general"));
        assert_eq!(v[1].gold_spans, vec![UtteranceSpan::new(1, 3)]);
        assert_eq!(c.meetings()[0].utterances[3].text, "{blank}");
    }
}
