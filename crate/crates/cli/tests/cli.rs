use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn orex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orex")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = orex(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    orex(args).status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A FewRel-shaped file with `relations` relations of `per` records each.
fn fewrel_file(dir: &Path, name: &str, relations: &[usize]) -> PathBuf {
    let mut root = serde_json::Map::new();
    for (r, &count) in relations.iter().enumerate() {
        let records: Vec<Value> = (0..count)
            .map(|i| {
                json!({
                    "tokens": ["entity", format!("h{r}x{i}"), "relates", "to", format!("t{r}x{i}"), "."],
                    "h": [format!("h{r}x{i}"), "Q1", [[1]]],
                    "t": [format!("t{r}x{i}"), "Q2", [[4]]],
                })
            })
            .collect();
        root.insert(format!("P{r}"), Value::Array(records));
    }
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(&root).unwrap()).unwrap();
    path
}

fn pid2name(dir: &Path, relations: usize) -> PathBuf {
    let map: serde_json::Map<String, Value> =
        (0..relations).map(|r| (format!("P{r}"), json!([format!("relation {r}"), "description"]))).collect();
    let path = dir.join("pid2name.json");
    std::fs::write(&path, serde_json::to_string(&map).unwrap()).unwrap();
    path
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Ingests 8 relations x 10 instances with 4 known.
fn small_dataset(dir: &Path) -> PathBuf {
    let input = fewrel_file(dir, "fewrel.json", &[10; 8]);
    let names = pid2name(dir, 8);
    let data = dir.join("data");
    ok(&["ingest", "--format", "fewrel", "--input", p(&input), "--pid2name", p(&names), "--known-first", "4", "--out", p(&data)]);
    data
}

fn run_args<'a>(data: &'a Path, out: &'a Path) -> Vec<String> {
    vec![
        "run".into(),
        "--train".into(),
        data.join("train.jsonl").display().to_string(),
        "--test".into(),
        data.join("test.jsonl").display().to_string(),
        "--gold".into(),
        data.join("gold.json").display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]
}

fn run_with(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = run_args(data, out);
    args.extend(extra.iter().map(|s| s.to_string()));
    Command::new(env!("CARGO_BIN_EXE_orex")).args(&args).output().unwrap()
}

#[test]
fn ingest_fewrel_known_first_splits_relations() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let train = read_lines(&data.join("train.jsonl"));
    let test = read_lines(&data.join("test.jsonl"));
    let gold = read_json(&data.join("gold.json"));
    assert_eq!(train.len(), 40);
    assert_eq!(test.len(), 40);
    assert!(test.iter().all(|l| l["relation"].is_null()));
    let train_rel: std::collections::BTreeSet<&str> = train.iter().map(|l| l["relation"].as_str().unwrap()).collect();
    let test_rel: std::collections::BTreeSet<&str> = gold.as_object().unwrap().values().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(train_rel.len(), 4);
    assert_eq!(test_rel.len(), 4);
    assert!(train_rel.is_disjoint(&test_rel));
    assert!(train_rel.contains("relation 0"));
}

#[test]
fn ingest_long_tail_follows_count_formula() {
    let dir = tempfile::tempdir().unwrap();
    let input = fewrel_file(dir.path(), "fewrel.json", &[20, 700, 700, 700]);
    let out = dir.path().join("lt");
    ok(&["ingest", "--format", "fewrel", "--input", p(&input), "--known-first", "1", "--long-tail", "--out", p(&out)]);
    let gold = read_json(&out.join("gold.json"));
    let mut counts = std::collections::BTreeMap::new();
    for rel in gold.as_object().unwrap().values() {
        *counts.entry(rel.as_str().unwrap().to_string()).or_insert(0usize) += 1;
    }
    assert_eq!(counts["p1"], 700);
    assert_eq!(counts["p2"], 466);
    assert_eq!(counts["p3"], 350);
}

#[test]
fn ingest_errors_exit_with_user_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = dir.path().join("o");
    assert_eq!(code(&["ingest", "--format", "fewrel", "--input", p(&missing), "--known-first", "1", "--out", p(&out)]), 2);
    let input = fewrel_file(dir.path(), "f.json", &[5, 5]);
    assert_eq!(code(&["ingest", "--format", "fewrel", "--input", p(&input), "--known-first", "2", "--out", p(&out)]), 2);
    assert_eq!(code(&["ingest", "--format", "fewrel", "--input", p(&input), "--out", p(&out)]), 2);
}

#[test]
fn simulator_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_with(&data, &a, &["--seed", "7"]).status.success());
    assert!(run_with(&data, &b, &["--seed", "7", "--max-in-flight", "3"]).status.success());
    for file in ["predictions.jsonl", "discovery.jsonl", "trace_discovery.jsonl", "reliable.jsonl", "trace_denoising.jsonl", "trace_prediction.jsonl", "report.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["config"]["n"], 4);
    assert_eq!(manifest["config"]["k"], 3);
    assert_eq!(manifest["config"]["t"], 3);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(read_lines(&a.join("predictions.jsonl")).len(), 40);
}

#[test]
fn run_prints_summary_with_gold() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = run_with(&data, &dir.path().join("r"), &[]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("b3_f1=") && stdout.contains("pass_at_3="), "{stdout}");
}

#[test]
fn t_zero_skips_denoising() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("r");
    assert!(run_with(&data, &out, &["--t", "0"]).status.success());
    assert!(!out.join("reliable.jsonl").exists());
    let stages: Vec<String> =
        read_json(&out.join("manifest.json"))["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap().to_string()).collect();
    assert_eq!(stages, ["discovery", "prediction"]);
}

#[test]
fn stop_after_discovery_writes_discovery_outputs_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("r");
    assert!(run_with(&data, &out, &["--stop-after", "discovery"]).status.success());
    assert!(out.join("discovery.jsonl").exists());
    assert!(!out.join("trace_prediction.jsonl").exists());
    assert!(!out.join("reliable.jsonl").exists());
    assert!(read_lines(&out.join("predictions.jsonl")).iter().all(|l| l["stage"] == "discovery"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n = 3\nk = 2\nd = \"auto\"\np_hit_otherwise = 0.4\nstop_after = \"denoising\"\n").unwrap();
    let out = dir.path().join("r");
    assert!(run_with(&data, &out, &["--config", p(&cfg), "--k", "1"]).status.success());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["n"], 3);
    assert_eq!(manifest["config"]["k"], 1);
    assert_eq!(manifest["config"]["stop_after"], "denoising");
    assert_eq!(manifest["backend"]["config"]["p_hit_otherwise"], 0.4);

    let paths_only = dir.path().join("paths.toml");
    let body = format!(
        "train = {:?}\ntest = {:?}\ngold = {:?}\nout = {:?}\nt = 0\n",
        data.join("train.jsonl"),
        data.join("test.jsonl"),
        data.join("gold.json"),
        dir.path().join("from_file")
    );
    std::fs::write(&paths_only, body).unwrap();
    ok(&["run", "--config", p(&paths_only)]);
    assert!(dir.path().join("from_file/predictions.jsonl").exists());

    std::fs::write(&cfg, "n = 3\nbatch_size = 2\n").unwrap();
    let bad = run_with(&data, &dir.path().join("bad"), &["--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("batch_size"));
}

#[test]
fn invalid_settings_exit_with_user_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    assert_eq!(run_with(&data, &dir.path().join("r"), &["--n", "1"]).status.code(), Some(2));
    assert_eq!(run_with(&data, &dir.path().join("r"), &["--d", "often"]).status.code(), Some(2));
    assert_eq!(run_with(&data, &dir.path().join("r"), &["--backend", "http"]).status.code(), Some(2));
}

#[test]
fn backend_outage_exits_with_backend_code_and_marks_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    // Bind then drop a listener so the port refuses connections.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = dir.path().join("r");
    let endpoint = format!("http://127.0.0.1:{port}/v1");
    let status = run_with(&data, &out, &["--backend", "http", "--endpoint", &endpoint, "--model", "m", "--max-attempts", "1"]).status;
    assert_eq!(status.code(), Some(3));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["error"].as_str().unwrap().contains("discovery aborted"));
}

#[test]
fn recorded_completions_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let rec = dir.path().join("rec.jsonl");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_with(&data, &a, &["--record", p(&rec)]).status.success());
    assert!(run_with(&data, &b, &["--backend", "replay", "--replay", p(&rec)]).status.success());
    for file in ["predictions.jsonl", "trace_prediction.jsonl", "report.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

fn probe_pool(dir: &Path) -> PathBuf {
    let input = fewrel_file(dir, "pool.json", &[25; 40]);
    let data = dir.join("pool");
    ok(&["ingest", "--format", "fewrel", "--input", p(&input), "--known-first", "39", "--out", p(&data)]);
    // The train file holds 39 labeled relations; append the held-out one from gold.
    let mut lines = std::fs::read_to_string(data.join("train.jsonl")).unwrap();
    let gold = read_json(&data.join("gold.json"));
    for mut l in read_lines(&data.join("test.jsonl")) {
        l["relation"] = gold[l["id"].as_str().unwrap()].clone();
        lines.push_str(&(serde_json::to_string(&l).unwrap() + "\n"));
    }
    let pool = dir.join("pool.jsonl");
    std::fs::write(&pool, lines).unwrap();
    pool
}

#[test]
fn probe_reports_rows_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let pool = probe_pool(dir.path());
    let out = dir.path().join("probe");
    let stdout = ok(&["probe", "--pool", p(&pool), "--p-hit-target-in-demos", "0.9", "--p-hit-otherwise", "0.3", "--out", p(&out)]);
    assert!(stdout.contains("with_target"));
    let report = read_json(&out.join("probe_report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 9);
    for setting in ["zero_shot", "without_target", "with_target"] {
        let mine: Vec<&Value> = rows.iter().filter(|r| r["setting"] == setting).collect();
        assert_eq!(mine.len(), 3, "{setting}");
        let expected = if setting == "with_target" { 0.9 } else { 0.3 };
        for r in mine {
            assert_eq!(r["instances"], 1000);
            assert!((r["accuracy"].as_f64().unwrap() - expected).abs() <= 0.05, "{setting}: {r}");
        }
    }
    let zero = std::fs::read_to_string(out.join("prompt_zero_shot_4.txt")).unwrap();
    assert!(!zero.contains("Demonstrations"));
    assert!(std::fs::read_to_string(out.join("prompt_with_target_16.txt")).unwrap().contains("Demonstrations"));
}

#[test]
fn evaluate_scores_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let gold = read_json(&data.join("gold.json"));

    let perfect = dir.path().join("perfect.jsonl");
    let lines: String = gold
        .as_object()
        .unwrap()
        .iter()
        .map(|(id, rel)| json!({"id": id, "stage": "prediction", "relation": rel, "attempt_k": 1, "round": 1}).to_string() + "\n")
        .collect();
    std::fs::write(&perfect, lines).unwrap();
    ok(&["evaluate", "--predictions", p(&perfect), "--gold", p(&data.join("gold.json"))]);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["b3"]["f1"], 1.0);
    assert_eq!(report["v_measure"]["f1"], 1.0);
    assert_eq!(report["classification"]["f1"], 1.0);
    assert!(report.get("pass_at_k").is_none());

    let run = dir.path().join("run");
    assert!(run_with(&data, &run, &[]).status.success());
    let out = dir.path().join("again.json");
    ok(&["evaluate", "--predictions", p(&run.join("predictions.jsonl")), "--gold", p(&data.join("gold.json")), "--out", p(&out)]);
    assert_eq!(read_json(&out)["pass_at_k"]["k"], 3);
    assert_eq!(read_json(&out), read_json(&run.join("report.json")));

    let stranger = dir.path().join("stranger.jsonl");
    std::fs::write(&stranger, r#"{"id":"nope","stage":"prediction","relation":"x","attempt_k":1,"round":1}"#).unwrap();
    assert_eq!(code(&["evaluate", "--predictions", p(&stranger), "--gold", p(&data.join("gold.json"))]), 2);
}
