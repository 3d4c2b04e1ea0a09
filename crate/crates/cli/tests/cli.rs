use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const CORPUS: &str = r#"{"id": "unh", "text": "The University of New Haven is a private university in West Haven, Connecticut. Its campus size is 82 acres."}
{"id": "uwf", "text": "The University of West Florida is a public university in Pensacola. Its campus size is 1,600 acres."}
{"id": "rifles", "text": "100 Rifles is a 1969 western film directed by Tom Gries and starring Jim Brown and Raquel Welch."}
"#;

const SCRIPT: &str = r#"{"pattern": "(?s)82 acres.*Question: What is the campus size of University of New Haven", "response": "82 acres"}
{"pattern": "(?s)1,600 acres.*Question: What is the campus size of University of West Florida", "response": "1,600 acres"}
{"pattern": "(?s)Tom Gries.*Question: Who directed 100 Rifles", "response": "Tom Gries"}
{"match": "Question: Who produced 100 Rifles", "error": "simulated outage"}
{"default": "unanswerable"}
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("corpus.jsonl"), CORPUS).unwrap();
        std::fs::write(dir.path().join("script.jsonl"), SCRIPT).unwrap();
        std::fs::write(
            dir.path().join("okra.toml"),
            "[corpus]\npath = \"corpus.jsonl\"\n\n[index]\ndir = \"idx\"\n\n[gateway]\nbackend = \"mock\"\nmock_script = \"script.jsonl\"\n",
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn okra(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_okra"))
            .arg("--config")
            .arg(self.path("okra.toml"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("OKRA_API_KEY")
            .output()
            .unwrap()
    }

    fn trace(&self, args: &[&str]) -> Value {
        let out = self.okra(args);
        assert!(out.status.success(), "{}", stderr(&out));
        let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
        doc["result"].clone()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn index_builds_once_then_reports_up_to_date() {
    let ws = Workspace::new();
    let first = ws.okra(&["index"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    assert!(
        text.contains("granularity 150:") && text.contains("granularity 512:"),
        "{text}"
    );

    let manifest = read_json(&ws.path("idx/manifest.json"));
    assert_eq!(manifest["granularities"], serde_json::json!([150, 512]));
    assert_eq!(manifest["document_count"], 3);

    let second = ws.okra(&["index"]);
    assert!(second.status.success());
    assert!(stdout(&second).starts_with("up-to-date"), "{}", stdout(&second));

    // a changed corpus is re-indexed
    std::fs::write(ws.path("corpus.jsonl"), &CORPUS[..CORPUS.find('\n').unwrap() + 1]).unwrap();
    let third = ws.okra(&["index"]);
    assert!(!stdout(&third).starts_with("up-to-date"));
    assert_eq!(read_json(&ws.path("idx/manifest.json"))["document_count"], 1);
}

#[test]
fn missing_corpus_names_the_path() {
    let ws = Workspace::new();
    let out = ws.okra(&["index", "--corpus", "nowhere.jsonl"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nowhere.jsonl"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_one() {
    let ws = Workspace::new();
    assert_eq!(ws.okra(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ws.okra(&["--mode", "fast", "query", "x"]).status.code(), Some(1));
    assert_eq!(ws.okra(&["--help"]).status.code(), Some(0));
}

#[test]
fn querying_without_an_index_is_a_runtime_error() {
    let ws = Workspace::new();
    let out = ws.okra(&["query", "Who directed 100 Rifles?"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("okra index"));
}

#[test]
fn query_answers_from_a_built_index() {
    let ws = Workspace::new();
    assert!(ws.okra(&["index"]).status.success());
    let out = ws.okra(&["query", "Who directed 100 Rifles?"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "Tom Gries");
}

#[test]
fn std_rag_trace_has_no_analysis() {
    let ws = Workspace::new();
    let r = ws.trace(&[
        "--mode",
        "std-rag",
        "query",
        "--build",
        "--trace",
        "Who directed 100 Rifles?",
    ]);
    assert_eq!(r["mode"], "std-rag");
    assert!(r["analysis"].is_null());
    assert_eq!(r["plan"]["retrieval"]["granularity"], 512);
    assert_eq!(r["plan"]["retrieval"]["top_k"], 5);
    assert_eq!(r["context_granularity"], 512);
    assert_eq!(r["answer"], "Tom Gries");
}

#[test]
fn okra_trace_carries_analysis_and_plan() {
    let ws = Workspace::new();
    let r = ws.trace(&[
        "query",
        "--build",
        "--trace",
        "What is the campus size of University of New Haven?",
    ]);
    assert_eq!(r["mode"], "okra");
    assert_eq!(r["analysis"]["analysis"]["task_type"], "extractive");
    assert!(r["plan"]["pipeline"].is_string());
    assert_eq!(r["answer"], "82 acres");
    let usage = r["usage"].as_array().unwrap();
    assert_eq!(r["weighted_cost"], r["cost"]["weighted_cost"]);
    let expected: u64 = usage
        .iter()
        .map(|e| e["prompt_tokens"].as_u64().unwrap() + 4 * e["completion_tokens"].as_u64().unwrap())
        .sum();
    assert_eq!(r["weighted_cost"].as_u64(), Some(expected));
}

#[test]
fn precise_flag_falls_back_to_long_context() {
    let ws = Workspace::new();
    let r = ws.trace(&[
        "query",
        "--build",
        "--trace",
        "--precise",
        "What is the campus size of Yale?",
    ]);
    assert_eq!(r["fallback_taken"], "precise");
    assert_eq!(r["pipeline"], "long_context");
    assert_eq!(r["usage"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_scores_and_reports() {
    let ws = Workspace::new();
    std::fs::write(
        ws.path("qa.jsonl"),
        r#"{"id": "q1", "question": "What is the campus size of University of New Haven?", "answers": ["82 acres"], "metric": "em"}
{"id": "q2", "question": "What is the campus size of University of West Florida?", "answers": ["1600 acres"], "metric": "em"}
{"id": "q3", "question": "Who directed 100 Rifles?", "answers": ["Tom Gries"], "metric": "f1"}
"#,
    )
    .unwrap();
    let out = ws.okra(&["bench", "qa.jsonl", "--build", "--report", "out/report.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stdout(&out).starts_with("okra: score 100.0 | cost "),
        "{}",
        stdout(&out)
    );
    let report = read_json(&ws.path("out/report.json"));
    assert_eq!(report["records"].as_array().unwrap().len(), 3);
    assert_eq!(report["summary"]["failures"], 0);
}

#[test]
fn bench_keeps_going_past_a_failing_record() {
    let ws = Workspace::new();
    std::fs::write(
        ws.path("qa.jsonl"),
        r#"{"id": "q1", "question": "Who directed 100 Rifles?", "answers": ["Tom Gries"], "metric": "em"}
{"id": "q2", "question": "Who produced 100 Rifles?", "answers": ["Marvin Schwartz"], "metric": "em"}
"#,
    )
    .unwrap();
    let out = ws.okra(&["--mode", "std-rag", "bench", "qa.jsonl", "--build"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("n=1 failed=1"), "{}", stdout(&out));
    let report = read_json(&ws.path("bench-report.json"));
    assert_eq!(report["failed"][0]["query_id"], "q2");
    assert_eq!(report["summary"]["score"], 100.0);
}

#[test]
fn bench_with_every_record_failing_exits_two() {
    let ws = Workspace::new();
    std::fs::write(
        ws.path("qa.jsonl"),
        "{\"id\": \"q2\", \"question\": \"Who produced 100 Rifles?\", \"answers\": [\"x\"], \"metric\": \"em\"}\n",
    )
    .unwrap();
    let out = ws.okra(&["--mode", "std-rag", "bench", "qa.jsonl", "--build"]);
    assert_eq!(out.status.code(), Some(2));
}
