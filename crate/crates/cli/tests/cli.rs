use std::path::Path;
use std::process::{Command, Output};

fn narrate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_narrate")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_exits_nonzero_with_usage() {
    let out = narrate(&["compare", "--bogus"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn stochastic_commands_require_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out_file = tmp.path().join("x.bin");
    for args in [
        vec!["train-embeddings", "--out", p(&out_file)],
        vec!["gen-dataset", "--out", p(&out_file)],
        vec!["train-mem", "--dataset", "d", "--embeddings", "e", "--out", p(&out_file)],
        vec!["train-agent", "--variant", "none"],
        vec!["evaluate", "--variant", "random"],
        vec!["project", "--mem", "m", "--dataset", "d", "--out", p(tmp.path())],
    ] {
        let out = narrate(&args);
        assert!(!out.status.success(), "{args:?} ran without --seed");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"), "{args:?}");
    }
    assert!(!out_file.exists());
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, r#"{"variant": "none", "not_a_field": 1}"#).unwrap();
    let out = narrate(&["train-agent", "--config", p(&cfg), "--seed", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_field"));
}

#[test]
fn corpus_check_passes_on_bundled_corpus() {
    let report = stdout_json(&narrate(&["gen-corpus-check"]));
    assert_eq!(report["passed"], true);
    let out = narrate(&["gen-corpus-check", "--min-sentences", "1000000"]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_emits_one_row_per_episode() {
    let out = narrate(&["evaluate", "--variant", "random", "--episodes", "3", "--seed", "5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,worker,episode,env_score,shaped_return,instr_completions,variant,seed");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.contains(",random,5")));
    let again = narrate(&["evaluate", "--variant", "random", "--episodes", "3", "--seed", "5"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn mem_pipeline_is_reproducible_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.json");
    std::fs::write(
        &cfg,
        r#"{
  "lexicon": {"epochs": 1},
  "dataset": {"per_command": 20, "nulls": 100, "capture_rates": [1.0, 1.0, 1.0, 1.0, 1.0]},
  "mem": {"epochs": 2}
}"#,
    )
    .unwrap();
    let emb = tmp.path().join("emb.bin");
    let ds = tmp.path().join("ds.bin");
    stdout_json(&narrate(&["train-embeddings", "--config", p(&cfg), "--seed", "2", "--out", p(&emb)]));
    let d = stdout_json(&narrate(&["gen-dataset", "--config", p(&cfg), "--seed", "2", "--out", p(&ds)]));
    assert_eq!(d["matched"], 100);

    let mut hashes = Vec::new();
    for name in ["m1.bin", "m2.bin"] {
        let out = tmp.path().join(name);
        let j = stdout_json(&narrate(&[
            "train-mem", "--config", p(&cfg), "--seed", "9", "--dataset", p(&ds), "--embeddings", p(&emb), "--out",
            p(&out),
        ]));
        hashes.push(j["mem_sha256"].as_str().unwrap().to_string());
        assert!(Path::new(&format!("{}.json", out.display())).exists());
    }
    assert_eq!(hashes[0], hashes[1]);

    let m = tmp.path().join("m1.bin");
    let eval = stdout_json(&narrate(&["eval-mem", "--mem", p(&m), "--dataset", p(&ds)]));
    assert_eq!(eval["mem_sha256"].as_str(), Some(hashes[0].as_str()));
    assert!(eval["metrics"]["samples"].as_u64().unwrap() > 0);

    let g = stdout_json(&narrate(&["generalize", "--mem", p(&m), "--dataset", p(&ds)]));
    assert_eq!(g["original"].as_array().unwrap().len(), 5);

    let proj = tmp.path().join("proj");
    stdout_json(&narrate(&[
        "project", "--mem", p(&m), "--dataset", p(&ds), "--method", "pca", "--samples", "50", "--seed", "1", "--out",
        p(&proj),
    ]));
    assert!(proj.join("projection.svg").exists());
    let too_many = narrate(&[
        "project", "--mem", p(&m), "--dataset", p(&ds), "--samples", "1995", "--seed", "1", "--out", p(&proj),
    ]);
    assert!(!too_many.status.success());
}

#[test]
fn train_agent_and_compare_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ["--steps", "64", "--workers", "1", "--eval-every", "32", "--eval-episodes", "1"];
    let mut dirs = Vec::new();
    for variant in ["none", "random"] {
        let out = tmp.path().join(variant);
        let mut args = vec!["train-agent", "--variant", variant, "--seed", "1,2", "--out", p(&out)];
        args.extend(base);
        let s = stdout_json(&narrate(&args));
        assert_eq!(s["variant"], variant);
        assert_eq!(s["seeds"], serde_json::json!([1, 2]));
        dirs.push(out);
    }
    let ckpt = dirs[0].join("agent_seed1.bin");
    let out = narrate(&["evaluate", "--checkpoint", p(&ckpt), "--episodes", "2", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);

    let cmp = tmp.path().join("cmp");
    let j = stdout_json(&narrate(&["compare", "--runs", p(&dirs[0]), p(&dirs[1]), "--out", p(&cmp)]));
    assert_eq!(j.as_array().unwrap().len(), 2);
    assert!(cmp.join("learning_curves.svg").exists() && cmp.join("comparison.csv").exists());
}
