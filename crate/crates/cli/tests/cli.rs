use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dolphin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dolphin"))
        .args(args)
        .env_remove("DOLPHIN_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok_lines(args: &[&str]) -> Vec<Value> {
    let out = dolphin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l:?}: {e}")))
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn plan_from_sizes() {
    let v = ok_lines(&["sample", "plan", "--sizes", "a=3,b=1", "--alpha", "1"]);
    let ps: Vec<f64> = v[0]["datasets"].as_array().unwrap().iter().map(|d| d["p"].as_f64().unwrap()).collect();
    assert_eq!(ps, [0.75, 0.25]);
    assert_eq!(v[0]["prng"], "chacha8-v1");
}

#[test]
fn plan_draws_are_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    ok_lines(&["sample", "plan", "--sizes", "a=30,b=10", "--out", p(&plan), "--seed", "3"]);
    let a = dolphin(&["sample", "draw", "--plan", p(&plan), "--length", "50"]);
    let b = dolphin(&["sample", "draw", "--plan", p(&plan), "--length", "50"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 50);
}

#[test]
fn identical_files_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ref.txt");
    std::fs::write(&f, "we love beijing\n北京 欢迎你\n").unwrap();
    let v = ok_lines(&["eval", "wer", "--ref", p(&f), "--hyp", p(&f)]);
    assert_eq!(v[0]["wer"], 0.0);
    assert_eq!(v[0]["bwer"], Value::Null);

    let out = dolphin(&["eval", "wer", "--ref", p(&f), "--hyp", p(&f), "--format", "table"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.00 (n/a | 0.00)");
}

#[test]
fn hotword_split_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let (r, h, hw) = (dir.path().join("r"), dir.path().join("h"), dir.path().join("hw"));
    std::fs::write(&r, "我爱北京\n").unwrap();
    std::fs::write(&h, "我爱南京\n").unwrap();
    std::fs::write(&hw, "北京\n").unwrap();
    let out = dolphin(&["eval", "wer", "--ref", p(&r), "--hyp", p(&h), "--hotwords", p(&hw), "--format", "table"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "25.00 (50.00 | 0.00)");
}

#[test]
fn rer_value() {
    let v = ok_lines(&["eval", "rer", "--before", "1.94", "--after", "1.64"]);
    assert!((v[0]["rer"].as_f64().unwrap() - 15.46).abs() < 0.01);
    assert_eq!(dolphin(&["eval", "rer", "--before", "0", "--after", "1"]).status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(dolphin(&["bogus"]).status.code(), Some(1));
    assert_eq!(dolphin(&["eval", "rer", "--before", "1"]).status.code(), Some(1));
    assert_eq!(dolphin(&["eval", "wer", "--ref", "/nonexistent/r", "--hyp", "/nonexistent/h"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "beem = 1\n").unwrap();
    let out = dolphin(&["--config", p(&bad), "eval", "rer", "--before", "2", "--after", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beem"));
}

#[test]
fn config_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[sample]\nalpha = 0.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dolphin"))
        .args(["sample", "plan", "--sizes", "a=9,b=1"])
        .env("DOLPHIN_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["alpha"], 0.0);
    assert_eq!(v["datasets"][0]["p"], 0.5);
}

#[test]
fn tokenizer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, model) = (dir.path().join("c.txt"), dir.path().join("m.json"));
    std::fs::write(&corpus, "我爱北京天安门\nhello world\nthe lower the better\n").unwrap();
    let built = ok_lines(&["tok", "build", "--corpus", p(&corpus), "--vocab-size", "300", "--out", p(&model)]);
    assert_eq!(built[0]["breakdown"]["reserved"], 80);

    let text = "我爱 hello 北京";
    let enc = ok_lines(&["tok", "encode", "--model", p(&model), "--text", text]);
    let ids: Vec<String> = enc[0]["ids"].as_array().unwrap().iter().map(|i| i.to_string()).collect();
    let dec = ok_lines(&["tok", "decode", "--model", p(&model), "--ids", &ids.join(",")]);
    assert_eq!(dec[0]["text"], text);
    assert_eq!(dolphin(&["tok", "decode", "--model", p(&model), "--ids", "99999"]).status.code(), Some(2));
}

#[test]
fn demo_artifacts_flow_through_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = dolphin(&["demo", "--out", p(d), "--utterances", "3", "--seed", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let validated = ok_lines(&["pipe", "validate", "--in", p(&d.join("manifest.jsonl")), "--out", p(&d.join("v.jsonl"))]);
    let summary = validated.last().unwrap();
    assert!(summary["rejected"].as_u64().unwrap() >= 1);
    assert!(validated.iter().any(|l| l["duration_s"] == 66.0 && l["reason"] == "too-long"));

    let shards = ok_lines(&["pipe", "shard", "--in", p(&d.join("v.jsonl")), "--shard-size", "40", "--out", p(&d.join("s"))]);
    let stored: u64 = shards.iter().map(|s| s["record_count"].as_u64().unwrap()).sum();
    assert_eq!(stored, summary["accepted"].as_u64().unwrap());
    let bench = ok_lines(&["pipe", "bench", "--dir", p(&d.join("s")), "--readers", "2"]);
    assert_eq!(bench[0]["records"].as_u64().unwrap(), stored);

    let pg = std::fs::read_dir(d.join("posteriorgrams")).unwrap().next().unwrap().unwrap().path();
    let (model, hotwords) = (d.join("model.json"), d.join("hotwords.txt"));
    let filtered = ok_lines(&["bias", "filter", "--pg", p(&pg), "--hotwords", p(&hotwords), "--model", p(&model)]);
    assert!(!filtered.is_empty());

    let nbest = ok_lines(&["decode", "ctc", "--pg", p(&pg), "--beam", "4", "--hotwords", p(&hotwords), "--model", p(&model)]);
    assert!(!nbest.is_empty() && nbest.len() <= 4);
    let nb_file = d.join("nb.jsonl");
    std::fs::write(&nb_file, nbest.iter().map(|v| format!("{v}\n")).collect::<String>()).unwrap();
    let rescored = ok_lines(&["decode", "rescore", "--nbest", p(&nb_file), "--prompt", "1,2"]);
    let key = |v: &Value| v["tokens"].to_string();
    let mut before: Vec<String> = nbest.iter().map(key).collect();
    let mut after: Vec<String> = rescored.iter().map(key).collect();
    before.sort();
    after.sort();
    assert_eq!(before, after);
}
