use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use convsim::backend::{ExhaustedBehavior, ScriptBook};
use serde_json::{json, Value};

fn convsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convsim"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_inputs(dir: &Path) {
    let contexts: Vec<Value> = (0..3)
        .map(|i| {
            json!({
                "id": format!("ctx{i}"),
                "title": format!("Topic {i}"),
                "background": "Some background.",
                "section_header": "History",
                "section_text": "It began in 1910. It grew quickly after the war. The archive closed in 2001."
            })
        })
        .collect();
    fs::write(
        dir.join("contexts.json"),
        serde_json::to_string(&contexts).unwrap(),
    )
    .unwrap();
    ScriptBook::new(ExhaustedBehavior::RepeatLast)
        .with_session(
            "student",
            vec!["When did it begin?".into(), "What happened later?".into()],
        )
        .with_session(
            "teacher",
            vec![
                "It began in 1910.".into(),
                "The archive closed in 2001.".into(),
            ],
        )
        .save(&dir.join("script.json"))
        .unwrap();
}

fn simulate(dir: &Path, out: &str, parallel: &str) -> Output {
    convsim(&[
        "simulate",
        "--contexts",
        s(&dir.join("contexts.json")),
        "--out",
        s(&dir.join(out)),
        "--backend",
        &format!("scripted:{}", s(&dir.join("script.json"))),
        "--seed",
        "5",
        "--max-turns",
        "3",
        "--parallel",
        parallel,
    ])
}

#[test]
fn simulate_is_reproducible_and_feeds_eval() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    for (out, k) in [("a", "1"), ("b", "3")] {
        let o = simulate(dir.path(), out, k);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["dataset.json", "traces.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
    let dataset = dir.path().join("a/dataset.json");
    let v = convsim(&["validate", "--dataset", s(&dataset)]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stdout));

    let e = convsim(&["eval", "coverage", "--dataset", s(&dataset), "--json"]);
    assert!(e.status.success());
    let report: Value = serde_json::from_slice(&e.stdout).unwrap();
    assert!(report.to_string().contains("coverage"));

    let p = convsim(&["pair-stats", "--a", s(&dataset), "--b", s(&dataset)]);
    assert!(p.status.success());
    assert!(String::from_utf8_lossy(&p.stdout).contains("Same"));
}

#[test]
fn score_reads_predictions() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    assert!(simulate(dir.path(), "out", "1").status.success());
    let dataset = dir.path().join("out/dataset.json");
    let ds: Value = serde_json::from_str(&fs::read_to_string(&dataset).unwrap()).unwrap();
    let lines: Vec<String> = ds["records"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r["qas"].as_array().unwrap().clone())
        .map(|qa| {
            json!({"question_id": qa["id"], "answer_text": qa["answers"][0]["text"]}).to_string()
        })
        .collect();
    let preds = dir.path().join("preds.jsonl");
    fs::write(&preds, lines.join("\n")).unwrap();
    let o = convsim(&[
        "score",
        "--dataset",
        s(&dataset),
        "--predictions",
        s(&preds),
        "--json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(table["f1"].as_f64(), Some(1.0));
}

#[test]
fn validate_flags_broken_spans() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let ds = json!({"name": "bad", "records": [{
        "context": {"id": "c", "title": "T", "background": "B.", "section_header": "H",
                    "section_text": "Alpha beta gamma."},
        "qas": [{"id": "c_q#0", "question": "Q?", "answers": [{"text": "beta gamma", "answer_start": 6}]}]
    }]});
    fs::write(&path, ds.to_string()).unwrap();
    assert!(convsim(&["validate", "--dataset", s(&path)])
        .status
        .success());
    let tight = convsim(&[
        "validate",
        "--dataset",
        s(&path),
        "--max-answer-tokens",
        "1",
    ]);
    assert_eq!(tight.status.code(), Some(1));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(convsim(&["eval"]).status.code(), Some(2));
    assert_eq!(convsim(&["no-such-command"]).status.code(), Some(2));
    let missing = convsim(&["validate", "--dataset", "/no/such/file.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let bad_backend = convsim(&[
        "simulate",
        "--contexts",
        s(&dir.path().join("contexts.json")),
        "--out",
        s(&dir.path().join("x")),
        "--backend",
        "telepathy",
    ]);
    assert_eq!(bad_backend.status.code(), Some(2));
}
