use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use narrate_core::agents::{RunRecord, ShaperRegistry};
use narrate_core::harness::*;
use narrate_core::mem::DatasetConfig;

fn row(step: u64, worker: &str, episode: u64, score: f64, variant: &str, seed: u64) -> RunRecord {
    RunRecord {
        step,
        worker: worker.into(),
        episode,
        env_score: score,
        shaped_return: score,
        instr_completions: 0,
        variant: variant.into(),
        seed,
    }
}

/// Three seeds evaluated at steps 0, 10, 20 with two episodes each, whose
/// per-step means are `values[seed][i]`. Training rows carry junk scores.
fn toy_run(dir: &Path, variant: &str, values: &[[f64; 3]], steps: [u64; 3]) {
    let mut rows = Vec::new();
    for (k, vals) in values.iter().enumerate() {
        let seed = k as u64 + 1;
        for (i, &step) in steps.iter().enumerate() {
            rows.push(row(step, "0", i as u64, 1000.0, variant, seed));
            rows.push(row(step, "eval", 0, vals[i] - 1.0, variant, seed));
            rows.push(row(step, "eval", 1, vals[i] + 1.0, variant, seed));
        }
    }
    fs::create_dir_all(dir).unwrap();
    write_curve(&dir.join("curve.csv"), &rows).unwrap();
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(snapshot(&p));
        } else {
            out.insert(p.clone(), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn comparison_band_matches_hand_computation() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    toy_run(&a, "narration", &[[0.0, 2.0, 4.0], [0.0, 4.0, 8.0], [0.0, 6.0, 12.0]], [0, 10, 20]);
    toy_run(&b, "none", &[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], [0, 10, 20]);
    let cmp = compare_runs(&[a, b], 2).unwrap();

    let pts = &cmp.curves[0].points;
    assert_eq!(pts.iter().map(|p| p.step).collect::<Vec<_>>(), vec![0, 10, 20]);
    // Window 2 at step 20: per-seed averages 3, 6, 9.
    assert!((pts[2].mean - 6.0).abs() < 1e-12);
    assert!((pts[2].stderr - 3.0f64.sqrt()).abs() < 1e-12);
    // Step 10: per-seed averages 1, 2, 3.
    assert!((pts[1].mean - 2.0).abs() < 1e-12);
    assert!((pts[1].stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!((pts[0].mean, pts[0].stderr, pts[0].seeds), (0.0, 0.0, 3));

    let flat = &cmp.curves[1].points;
    assert!(flat.iter().all(|p| p.mean == 1.0 && p.stderr == 0.0));
    assert_eq!(cmp.curves[0].variant, "narration");
}

#[test]
fn self_comparison_has_zero_band_between_identical_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let vals = [[3.0, 5.0, 7.0]];
    toy_run(&a, "none", &vals, [0, 10, 20]);
    toy_run(&b, "none", &vals, [0, 10, 20]);
    let cmp = compare_runs(&[a, b], 3).unwrap();
    assert_eq!(cmp.curves[0].points, cmp.curves[1].points);
    assert!(cmp.curves[0].points.iter().all(|p| p.stderr == 0.0));
}

#[test]
fn compare_writes_parseable_svg_and_csv_without_touching_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    toy_run(&a, "subtask", &[[0.0, 1.0, 2.0], [0.5, 1.5, 2.5]], [0, 10, 20]);
    toy_run(&b, "none", &[[0.0, 0.5, 1.0], [0.0, 1.0, 1.0]], [0, 10, 20]);
    let before = (snapshot(&a), snapshot(&b));

    let out = tmp.path().join("cmp");
    compare_runs(&[a.clone(), b.clone()], 10).unwrap().write(&out).unwrap();
    assert_eq!((snapshot(&a), snapshot(&b)), before);

    let svg = fs::read_to_string(out.join("learning_curves.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("valid XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let has = |tag: &str| doc.descendants().any(|n| n.tag_name().name() == tag);
    assert!(has("title") && has("desc"));
    let lines = doc.descendants().filter(|n| n.tag_name().name() == "polyline").count();
    assert!(lines >= 2, "expected one polyline per run, found {lines}");

    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("run,variant,step,mean,stderr,seeds"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn mismatched_cadence_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    toy_run(&a, "none", &[[1.0, 2.0, 3.0]], [0, 10, 20]);
    toy_run(&b, "none", &[[1.0, 2.0, 3.0]], [0, 10, 30]);
    assert!(matches!(compare_runs(&[a.clone(), b], 2), Err(HarnessError::Cadence(_))));
    assert!(matches!(compare_runs(&[a], 2), Err(HarnessError::Config(_))));
}

fn tiny_config(variant: Variant, out: PathBuf) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        variant,
        seeds: vec![3, 4],
        output: out,
        ..Default::default()
    };
    c.agent.workers = 1;
    c.agent.rollout = 8;
    c.agent.total_steps = 240;
    c.agent.eval_every = 120;
    c.agent.eval_episodes = 2;
    c.agent.horizon = 40;
    c.lexicon.epochs = 1;
    c.dataset = DatasetConfig {
        per_command: 20,
        nulls: 100,
        capture_rates: [1.0; 5],
        ..Default::default()
    };
    c.mem.epochs = 1;
    c
}

fn eval_rows(dir: &Path) -> Vec<RunRecord> {
    csv::Reader::from_path(dir.join("curve.csv"))
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .filter(|r: &RunRecord| r.is_eval())
        .collect()
}

#[test]
fn experiment_writes_reproducible_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = ShaperRegistry::with_builtins();
    let a = tmp.path().join("none_a");
    let b = tmp.path().join("none_b");
    let s1 = run_experiment(&tiny_config(Variant::None, a.clone()), &reg, &mut |_| {}).unwrap();
    let s2 = run_experiment(&tiny_config(Variant::None, b.clone()), &reg, &mut |_| {}).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(s1.seeds, vec![3, 4]);
    assert!(s1.mem_hash.is_none());

    let rows = eval_rows(&a);
    assert_eq!(rows, eval_rows(&b));
    let mut steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
    steps.dedup();
    assert_eq!(steps, vec![0, 120, 240, 0, 120, 240]);
    assert_eq!(rows.len(), 2 * 3 * 2);

    for f in ["config.json", "curve.csv", "summary.json", "provenance.json", "agent_seed3.bin", "agent_seed4.bin"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert!(!a.join(FAILURE_MARKER).exists());
    let cfg = ExperimentConfig::load(&a.join("config.json")).unwrap();
    assert_eq!(cfg, tiny_config(Variant::None, a.clone()));
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, s1);
    let prov: Provenance = serde_json::from_str(&fs::read_to_string(a.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov.config_sha256, sha256_hex(fs::read(a.join("config.json")).unwrap().as_slice()));
    assert_eq!(prov.agents.len(), 2);
}

#[test]
fn narration_run_records_mem_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("narration");
    let config = tiny_config(Variant::Narration, dir.clone());
    let summary = run_experiment(&config, &ShaperRegistry::with_builtins(), &mut |_| {}).unwrap();
    let prov: Provenance = serde_json::from_str(&fs::read_to_string(dir.join("provenance.json")).unwrap()).unwrap();
    let mem_hash = summary.mem_hash.clone().expect("narration runs record the MEM hash");
    assert_eq!(prov.mem_sha256.as_ref(), Some(&mem_hash));
    for h in [&prov.corpus_sha256, &prov.embeddings_sha256, &prov.dataset_sha256] {
        assert_eq!(h.as_ref().map(String::len), Some(64));
    }
    let art = MemArtifacts::load(&dir.join("artifacts/mem.bin")).unwrap();
    assert_eq!(art.mem_sha256, mem_hash);
    assert_eq!(art.mem.hash(), mem_hash);

    // Reusing the saved model gives the same hash and the same evaluations.
    let mut again = config.clone();
    again.output = tmp.path().join("reuse");
    again.mem_path = Some(dir.join("artifacts/mem.bin"));
    let s2 = run_experiment(&again, &ShaperRegistry::with_builtins(), &mut |_| {}).unwrap();
    assert_eq!(s2.mem_hash, summary.mem_hash);
    assert_eq!(eval_rows(&again.output), eval_rows(&dir));
}

#[test]
fn random_variant_replicates_one_evaluation_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("random");
    run_experiment(&tiny_config(Variant::Random, dir.clone()), &ShaperRegistry::with_builtins(), &mut |_| {}).unwrap();
    let rows = eval_rows(&dir);
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.variant == "random"));
    let first: Vec<f64> = rows.iter().filter(|r| r.step == 0 && r.seed == 3).map(|r| r.env_score).collect();
    let last: Vec<f64> = rows.iter().filter(|r| r.step == 240 && r.seed == 4).map(|r| r.env_score).collect();
    assert_eq!(first, last);
}

#[test]
fn failed_run_leaves_marker_and_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("broken");
    let mut config = tiny_config(Variant::Subtask, dir.clone());
    config.commands = Some(tmp.path().join("missing_commands.json"));
    let err = run_experiment(&config, &ShaperRegistry::with_builtins(), &mut |_| {});
    assert!(err.is_err());
    let marker = fs::read_to_string(dir.join(FAILURE_MARKER)).unwrap();
    assert!(marker.contains("missing_commands.json"), "{marker}");
    assert!(dir.join("config.json").exists() && dir.join("curve.csv").exists());
    assert!(!dir.join("summary.json").exists());

    // A later successful run in the same directory clears the marker.
    config.commands = None;
    run_experiment(&config, &ShaperRegistry::with_builtins(), &mut |_| {}).unwrap();
    assert!(!dir.join(FAILURE_MARKER).exists());
}

#[test]
fn invalid_configs_fail_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("never");
    let mut config = tiny_config(Variant::None, dir.clone());
    config.seeds.clear();
    assert!(matches!(
        run_experiment(&config, &ShaperRegistry::with_builtins(), &mut |_| {}),
        Err(HarnessError::Config(_))
    ));
    assert!(!dir.exists());

    let config = tiny_config(Variant::Subtask, dir.clone());
    assert!(run_experiment(&config, &ShaperRegistry::empty(), &mut |_| {}).is_err());
}
