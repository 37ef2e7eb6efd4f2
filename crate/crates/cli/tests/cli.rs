use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn etd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etd")).args(args).output().unwrap()
}

fn json(args: &[&str]) -> Value {
    let out = etd(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// A small trained benchmark shared by the tests in this file.
fn bench() -> &'static (tempfile::TempDir, PathBuf) {
    static BENCH: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    BENCH.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_str().unwrap();
        json(&["--json", "gen-synth", "--out", root, "--entities", "200", "--train", "80", "--valid", "10", "--test", "20"]);
        let config = dir.path().join("etd.toml");
        let text = std::fs::read_to_string(&config).unwrap().replace("max_epochs = 30", "max_epochs = 3");
        std::fs::write(&config, text).unwrap();
        json(&["--config", config.to_str().unwrap(), "--json", "pretrain"]);
        (dir, config)
    })
}

fn config() -> &'static str {
    bench().1.to_str().unwrap()
}

fn first_test_question() -> Value {
    let path = bench().0.path().join("test.jsonl");
    let line = std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_owned();
    serde_json::from_str(&line).unwrap()
}

#[test]
fn explore_lists_ranked_references() {
    let q = first_test_question();
    let out = json(&[
        "--config", config(), "--json", "explore",
        "--question", q["question"].as_str().unwrap(),
        "--topic", q["topic_entities"][0].as_str().unwrap(),
        "--top-n", "3",
    ]);
    let cands = out["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 3.min(out["num_candidates"].as_u64().unwrap() as usize));
    let probs: Vec<f64> = cands.iter().map(|c| c["probability"].as_f64().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn always_a_matches_explore_top1() {
    let q = first_test_question();
    let (question, topic) = (q["question"].as_str().unwrap(), q["topic_entities"][0].as_str().unwrap());
    let explored = json(&["--config", config(), "--json", "explore", "--question", question, "--topic", topic]);
    let answer = json(&[
        "--config", config(), "--json", "answer", "--question", question, "--topic", topic, "--llm-backend", "mock",
    ]);
    assert_eq!(answer["predicted"], explored["candidates"][0]["name"]);
    assert_eq!(answer["predicted"], answer["explore_only"]);
    assert_eq!(answer["determination"]["method"], "label");
}

#[test]
fn eval_reports_hits() {
    let report = json(&["--config", config(), "--json", "eval", "--llm-backend", "mock"]);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["questions"], 20);
    let hits = report["hits@1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&hits));
    assert_eq!(report["hits@1"], report["explore_only_hits@1"]);
    assert_eq!(report["records"].as_array().unwrap().len(), 20);
    assert!(report.get("timing").is_none());
}

#[test]
fn stats_pruned_below_unpruned() {
    let report = json(&["--config", config(), "--json", "stats", "--top-k", "2"]);
    for step in report["pruning"]["steps"].as_array().unwrap() {
        assert!(step["pruned_mean_edges"].as_f64() < step["unpruned_mean_edges"].as_f64());
    }
}

#[test]
fn bad_input_exit_codes() {
    assert_eq!(etd(&["no-such-command"]).status.code(), Some(1));
    let missing = Path::new("/nonexistent/etd.toml").to_str().unwrap();
    assert_eq!(etd(&["--config", missing, "stats", "--graph-only"]).status.code(), Some(2));
    let out = etd(&["--config", config(), "answer", "--question", "q", "--topic", "nobody", "--prompt-variant", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
}
