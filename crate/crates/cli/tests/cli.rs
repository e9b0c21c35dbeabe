use std::path::Path;
use std::process::{Command, Output};

use qfsum::corpus::{load_dataset, DatasetFormat, SplitName};
use qfsum::eval::{extractor_eval_row, ReportRows, TopK};
use qfsum::extractors::lead_scores;
use qfsum::rouge::RougeConfig;
use qfsum::segmenter::utterance_passages;
use serde_json::Value;

fn qfsum(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfsum"))
        .current_dir(dir)
        .env_remove("QFSUM_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = qfsum(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.lines().last().unwrap()).unwrap()
}

fn prepare(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec![
        "prepare",
        "--synthetic",
        "--seed",
        "7",
        "--meetings",
        "10",
        "--out",
        name,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn prepare_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, "a", &[]);
    prepare(d, "b", &[]);
    for f in ["meetings.jsonl", "train.jsonl", "validation.jsonl", "test.jsonl"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let m: Value = serde_json::from_str(&std::fs::read_to_string(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "prepare");
    assert_eq!(m["seed"], 7);
}

#[test]
fn usage_and_validation_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = qfsum(d, &["prepare", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");

    let out = qfsum(d, &["rank", "--corpus", "missing", "--extractor", "lead", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");

    prepare(d, "c", &[]);
    let out = qfsum(
        d,
        &[
            "build-targets",
            "--corpus",
            "c",
            "--out",
            "t",
            "--mode",
            "binary",
            "--positives",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "validation");

    assert_eq!(qfsum(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn evaluate_matches_library_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, "c", &[]);
    ok(d, &["rank", "--corpus", "c", "--extractor", "lead", "--out", "lead"]);
    ok(
        d,
        &[
            "evaluate",
            "--corpus",
            "c",
            "--rankings",
            "lead=lead",
            "--topk",
            "1,all",
            "--span-overlap",
            "--out",
            "ev",
        ],
    );

    let rows: ReportRows = serde_json::from_str(&std::fs::read_to_string(d.join("ev/table1.json")).unwrap()).unwrap();
    let ReportRows::Extractor(rows) = rows else {
        panic!("expected extractor rows")
    };
    assert_eq!(rows.len(), 2);

    let corpus = load_dataset(&d.join("c"), DatasetFormat::Jsonl).unwrap();
    let items: Vec<_> = corpus
        .pairs(SplitName::Test)
        .map(|(i, m)| (lead_scores(&utterance_passages(m)), i))
        .collect();
    let cfg = RougeConfig::default();
    for (row, k) in rows.iter().zip([TopK::K(1), TopK::All]) {
        let want = extractor_eval_row("lead", k, &items, 1024, &cfg).unwrap();
        assert_eq!(row.topk, k);
        for ((va, sa), (vb, sb)) in row.rouge.iter().zip(&want.rouge) {
            assert_eq!(va, vb);
            assert!((sa.f1 - sb.f1).abs() < 1e-12);
        }
        assert!((row.span_precision - want.span_precision).abs() < 1e-12);
        assert!((row.span_recall - want.span_recall).abs() < 1e-12);
    }
    let spans = std::fs::read_to_string(d.join("ev/span_overlap.jsonl")).unwrap();
    assert_eq!(spans.lines().count(), items.len());
    for line in spans.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let p = v["precision"].as_f64().unwrap();
        let r = v["recall"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
    }
    let md = std::fs::read_to_string(d.join("ev/table1.md")).unwrap();
    assert!(md.contains("| lead"));
}

#[test]
fn config_file_fills_flags_and_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"meetings": 5, "prepare": {"queries_per_meeting": 1}, "epochs": 2}"#,
    )
    .unwrap();
    ok(d, &["--config", "cfg.json", "prepare", "--synthetic", "--out", "a"]);
    let meetings = std::fs::read_to_string(d.join("a/meetings.jsonl")).unwrap();
    assert_eq!(meetings.lines().count(), 5);
    let total: usize = ["train", "validation", "test"]
        .iter()
        .map(|s| {
            std::fs::read_to_string(d.join(format!("a/{s}.jsonl")))
                .unwrap()
                .lines()
                .count()
        })
        .sum();
    assert_eq!(total, 5);

    ok(
        d,
        &[
            "--config",
            "cfg.json",
            "prepare",
            "--synthetic",
            "--meetings",
            "6",
            "--out",
            "b",
        ],
    );
    assert_eq!(
        std::fs::read_to_string(d.join("b/meetings.jsonl"))
            .unwrap()
            .lines()
            .count(),
        6
    );

    std::fs::write(d.join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    let out = qfsum(d, &["--config", "bad.json", "prepare", "--synthetic", "--out", "c"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_renders_saved_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepare(d, "c", &[]);
    ok(d, &["rank", "--corpus", "c", "--extractor", "oracle", "--out", "or"]);
    ok(
        d,
        &[
            "evaluate",
            "--corpus",
            "c",
            "--rankings",
            "oracle=or",
            "--topk",
            "1",
            "--out",
            "ev",
        ],
    );
    ok(
        d,
        &[
            "report",
            "--rows",
            "ev/table1.json",
            "--out",
            "t1.csv",
            "--format",
            "csv",
        ],
    );
    let csv = std::fs::read_to_string(d.join("t1.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("model"));
    assert!(lines.next().unwrap().starts_with("oracle"));
    assert!(d.join("t1.csv.manifest.json").exists());
}
