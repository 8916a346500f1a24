//! End-to-end runs of the `hypercube` binary on the case-study fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const MELBOURNE: &str = "How much rainfall did Melbourne Beach, Florida receive from Tropical Storm Fay?";

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/case_study")
}

fn config() -> PathBuf {
    fixture().join("hypercube.toml")
}

fn hypercube(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypercube")).args(args).output().expect("spawn hypercube")
}

fn with_config(args: &[&str]) -> Output {
    let config = config();
    let mut all = vec!["--config", config.to_str().unwrap()];
    all.extend_from_slice(args);
    hypercube(&all)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json stdout")
}

fn built_index(extra: &[&str]) -> (TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("idx").to_str().unwrap().to_string();
    let mut args = vec!["build", "--out", idx.as_str()];
    args.extend_from_slice(extra);
    let report = json(&with_config(&args));
    assert_eq!(report["indexed"], 10);
    (dir, idx)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn doc_ids(report: &Value) -> Vec<String> {
    report["results"].as_array().unwrap().iter().map(|r| r["doc_id"].as_str().unwrap().to_string()).collect()
}

#[test]
fn parallel_and_sequential_builds_are_byte_identical() {
    let (_a, par) = built_index(&[]);
    let (_b, seq) = built_index(&["--sequential"]);
    let (pa, sa) = (dir_bytes(Path::new(&par)), dir_bytes(Path::new(&seq)));
    assert!(pa.len() >= 3, "{:?}", pa.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(pa, sa);
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let schema = fixture().join("schema.json");
    let out = hypercube(&["build", "--corpus", "/does/not/exist.jsonl", "--schema", schema.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    assert_eq!(code(&hypercube(&["retrieve", "--top-k", "many"])), 1);
    assert_eq!(code(&hypercube(&["--help"])), 0);
}

#[test]
fn case_study_answer_cites_doc_565_first() {
    let (_d, idx) = built_index(&[]);
    let out = json(&with_config(&["answer", MELBOURNE, "--index", &idx]));
    assert_eq!(out["answer"], "25.28 inches");
    assert_eq!(out["supported"], true);
    assert_eq!(out["doc_ids"][0], "565");
    assert_eq!(doc_ids(&out["retrieval"]), ["565", "733", "858"]);
    let top = &out["retrieval"]["results"][0];
    assert_eq!(top["coverage"], 3);
    assert_eq!(top["tier"], "full");
}

#[test]
fn answer_provenance_matches_retrieve() {
    let (_d, idx) = built_index(&[]);
    let answer = json(&with_config(&["answer", MELBOURNE, "--index", &idx]));
    let retrieve = json(&with_config(&["retrieve", MELBOURNE, "--index", &idx]));
    let provenance: Vec<String> =
        answer["doc_ids"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    assert_eq!(provenance, doc_ids(&retrieve));
    assert_eq!(answer["retrieval"], retrieve);
}

#[test]
fn components_file_skips_decomposition() {
    let (d, idx) = built_index(&[]);
    let comps = d.path().join("c.json");
    fs::write(&comps, r#"[{"dimension": "Location", "content": "Melbourne Beach"}]"#).unwrap();
    let out = json(&with_config(&[
        "--backend",
        "gazetteer",
        "retrieve",
        "--components",
        comps.to_str().unwrap(),
        "--index",
        &idx,
    ]));
    assert_eq!(out["n_components"], 1);
    let ids = doc_ids(&out);
    assert!(ids.contains(&"565".to_string()) && ids.contains(&"733".to_string()), "{ids:?}");
}

#[test]
fn empty_retrieval_answers_without_support() {
    let (d, idx) = built_index(&[]);
    let comps = d.path().join("c.json");
    fs::write(&comps, r#"[{"dimension": "event", "content": "hurricane zed"}]"#).unwrap();
    let out = json(&with_config(&[
        "--backend",
        "gazetteer",
        "answer",
        "anything",
        "--no-semantic",
        "--components",
        comps.to_str().unwrap(),
        "--index",
        &idx,
    ]));
    assert_eq!(out["answer"], "[no supporting documents]");
    assert_eq!(out["supported"], false);
    assert!(out["doc_ids"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_dimension_is_a_usage_error() {
    let (d, idx) = built_index(&[]);
    let comps = d.path().join("c.json");
    fs::write(&comps, r#"[{"dimension": "person", "content": "someone"}]"#).unwrap();
    let out = with_config(&["retrieve", "--components", comps.to_str().unwrap(), "--index", &idx]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unscripted_prompt_is_a_backend_error() {
    let (_d, idx) = built_index(&[]);
    let out = with_config(&["answer", "A question nobody scripted?", "--index", &idx]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_reports_case_study_metrics() {
    let (d, idx) = built_index(&[]);
    let out_dir = d.path().join("eval");
    let qa = fixture().join("qa.jsonl");
    let reports = json(&with_config(&[
        "eval",
        "--qa",
        qa.to_str().unwrap(),
        "--index",
        &idx,
        "--method",
        "hypercube",
        "--answers",
        "--judge",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let r = &reports[0];
    assert_eq!(r["k"], 3);
    let a = &r["aggregate"];
    assert_eq!(a["queries"], 5);
    assert!((a["precision"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(a["recall"], 1.0);
    assert_eq!(a["correctness"], 1.0);
    assert!((a["completeness"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(r["queries"][0]["retrieved"], serde_json::json!(["565", "733", "858"]));
    assert!(out_dir.join("hypercube__full.json").is_file());
    assert!(fs::read_to_string(out_dir.join("summary.txt")).unwrap().contains("hypercube"));
}

#[test]
fn eval_baselines_and_ablation() {
    let (_d, idx) = built_index(&[]);
    let qa = fixture().join("qa.jsonl");
    let reports = json(&with_config(&["eval", "--qa", qa.to_str().unwrap(), "--index", &idx, "--ablation"]));
    let names: Vec<String> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| format!("{}/{}", r["method"].as_str().unwrap(), r["variant"].as_str().unwrap()))
        .collect();
    for expected in ["hypercube/full", "hypercube/no-semantic", "hypercube/no-theme", "bm25/full", "dense-scan/full"] {
        assert!(names.contains(&expected.to_string()), "{names:?}");
    }
}

#[test]
fn empty_qa_file_is_a_data_error() {
    let (d, idx) = built_index(&[]);
    let qa = d.path().join("empty.jsonl");
    fs::write(&qa, "").unwrap();
    let out = with_config(&["eval", "--qa", qa.to_str().unwrap(), "--index", &idx]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_tau_emits_one_report_per_threshold() {
    let (_d, idx) = built_index(&[]);
    let qa = fixture().join("qa.jsonl");
    let reports = json(&with_config(&["sweep-tau", "--qa", qa.to_str().unwrap(), "--index", &idx]));
    let taus: Vec<f64> = reports.as_array().unwrap().iter().map(|r| r["config"]["tau"].as_f64().unwrap()).collect();
    assert_eq!(taus, [0.5, 0.6, 0.7, 0.8, 0.9, 0.95]);
}

#[test]
fn bench_writes_csv() {
    let d = tempfile::tempdir().unwrap();
    let csv = d.path().join("bench.csv");
    let rows = json(&hypercube(&[
        "bench",
        "--sizes",
        "40,80,120",
        "--queries",
        "4",
        "--repetitions",
        "3",
        "--csv",
        csv.to_str().unwrap(),
    ]));
    assert_eq!(rows.as_array().unwrap().len(), 9);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,corpus_size,median_ms"));
    assert_eq!(lines.count(), 9);
}

#[test]
fn bench_needs_three_sizes() {
    assert_eq!(code(&hypercube(&["bench", "--sizes", "40,80"])), 1);
}
