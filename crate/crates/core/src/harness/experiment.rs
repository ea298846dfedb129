use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError, Variant};
use crate::agents::{evaluate, train, NoShaping, Policy, RunRecord, ShaperContext, ShaperRegistry};
use crate::lexicon::{train_skipgram, Corpus, SkipGramConfig, Vocab, WordEmbeddings, BUNDLED_CORPUS};
use crate::mem::{
    generate_dataset, train_mem, CommandSet, MemDataset, MemMetrics, MemModel, MemTrainConfig, ORIGINAL_COMMANDS_JSON,
};

/// File written into a run directory when the run stops on an error.
pub const FAILURE_MARKER: &str = "FAILED";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seeds: Vec<u64>,
    /// Mean over seeds of each seed's mean evaluation score in the last 10%
    /// of training.
    pub final_mean: f64,
    /// Standard error of that mean across seeds.
    pub final_stderr: f64,
    pub mem_hash: Option<String>,
}

/// Hashes of every input artifact, from corpus to agent checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub commands_sha256: String,
    pub corpus_sha256: Option<String>,
    pub embeddings_sha256: Option<String>,
    pub dataset_sha256: Option<String>,
    pub mem_sha256: Option<String>,
    /// Checkpoint hash per training seed.
    pub agents: BTreeMap<String, String>,
}

/// A trained embedding model and the hashes of what produced it.
#[derive(Debug, Clone)]
pub struct MemArtifacts {
    pub mem: MemModel,
    /// Training settings, when known.
    pub config: Option<MemTrainConfig>,
    pub seed: Option<u64>,
    pub metrics: Option<MemMetrics>,
    pub corpus_sha256: Option<String>,
    pub embeddings_sha256: Option<String>,
    pub dataset_sha256: Option<String>,
    pub mem_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct MemSidecar {
    config: Option<MemTrainConfig>,
    seed: Option<u64>,
    corpus_sha256: Option<String>,
    embeddings_sha256: Option<String>,
    dataset_sha256: Option<String>,
    mem_sha256: String,
    metrics: Option<MemMetrics>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// `<path>.json`, where every artifact keeps its provenance.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl MemArtifacts {
    /// Writes the model plus a JSON sidecar with its upstream hashes.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        self.mem.save(path)?;
        let side = MemSidecar {
            config: self.config,
            seed: self.seed,
            corpus_sha256: self.corpus_sha256.clone(),
            embeddings_sha256: self.embeddings_sha256.clone(),
            dataset_sha256: self.dataset_sha256.clone(),
            mem_sha256: self.mem_sha256.clone(),
            metrics: self.metrics.clone(),
        };
        write_file(&sidecar(path), serde_json::to_string_pretty(&side)?.as_bytes())
    }

    /// Loads a model; upstream hashes come from its sidecar when present.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mem = MemModel::load(path)?;
        let mem_sha256 = mem.hash();
        let side: Option<MemSidecar> = fs::read_to_string(sidecar(path))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        Ok(match side {
            Some(s) => Self {
                mem,
                config: s.config,
                seed: s.seed,
                metrics: s.metrics,
                corpus_sha256: s.corpus_sha256,
                embeddings_sha256: s.embeddings_sha256,
                dataset_sha256: s.dataset_sha256,
                mem_sha256,
            },
            None => Self {
                mem,
                config: None,
                seed: None,
                metrics: None,
                corpus_sha256: None,
                embeddings_sha256: None,
                dataset_sha256: None,
                mem_sha256,
            },
        })
    }
}

fn embeddings_bytes(w: &WordEmbeddings) -> Result<Vec<u8>, HarnessError> {
    let mut buf = Vec::new();
    w.write(&mut buf)?;
    Ok(buf)
}

/// Trains the embedding model on a dataset with word vectors from `words`.
pub fn train_mem_artifacts(
    words: &EmbeddingArtifacts,
    dataset: &MemDataset,
    config: &MemTrainConfig,
    seed: u64,
) -> Result<MemArtifacts, HarnessError> {
    let (mem, metrics) = train_mem(
        MemModel::new(words.words.clone(), seed),
        dataset,
        &CommandSet::original(),
        config,
        seed,
    )?;
    Ok(MemArtifacts {
        mem_sha256: mem.hash(),
        mem,
        config: Some(*config),
        seed: Some(seed),
        metrics: Some(metrics),
        corpus_sha256: Some(words.corpus_sha256.clone()).filter(|s| !s.is_empty()),
        embeddings_sha256: Some(words.sha256.clone()),
        dataset_sha256: Some(dataset.hash()),
    })
}

/// Loads `config.mem_path`, or runs corpus → word vectors → dataset → MEM
/// training. With `artifacts` set, every intermediate is saved there.
pub fn prepare_mem(
    config: &ExperimentConfig,
    artifacts: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<MemArtifacts, HarnessError> {
    if let Some(path) = &config.mem_path {
        log(&format!("loading embedding model {}", path.display()));
        return MemArtifacts::load(path);
    }
    let corpus_text = match &config.corpus {
        Some(p) => fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?,
        None => BUNDLED_CORPUS.to_string(),
    };
    log("training word vectors");
    let words = EmbeddingArtifacts::train(&corpus_text, &config.lexicon)?;
    log("generating embedding dataset");
    let dataset = generate_dataset(&config.dataset, config.dataset_seed)?;
    log(&format!("training embedding model for {} epochs", config.mem.epochs));
    let out = train_mem_artifacts(&words, &dataset, &config.mem, config.mem_seed)?;
    if let Some(best) = out.metrics.as_ref().map(MemMetrics::best) {
        log(&format!(
            "embedding model: best epoch {}, test accuracy {:.3}",
            best.epoch, best.test.accuracy
        ));
    }
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        words.save(&dir.join("embeddings.bin"), &config.lexicon)?;
        dataset.save(&dir.join("dataset.bin"))?;
        out.save(&dir.join("mem.bin"))?;
    }
    Ok(out)
}

/// Writes records in the `curve.csv` layout, header first.
pub fn write_records(out: impl std::io::Write, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CURVE_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(Path::new("<csv>"), e))?;
    Ok(())
}

/// Column order of `curve.csv`.
pub const CURVE_COLUMNS: [&str; 8] = [
    "step",
    "worker",
    "episode",
    "env_score",
    "shaped_return",
    "instr_completions",
    "variant",
    "seed",
];

/// Writes records as `curve.csv`.
pub fn write_curve(path: &Path, records: &[RunRecord]) -> Result<(), HarnessError> {
    let f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_records(std::io::BufWriter::new(f), records)
}

/// Trained word vectors with the hash of the corpus they came from.
#[derive(Debug, Clone)]
pub struct EmbeddingArtifacts {
    pub words: WordEmbeddings,
    pub corpus_sha256: String,
    pub sha256: String,
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingSidecar {
    corpus_sha256: String,
    sha256: String,
    config: SkipGramConfig,
    epoch_losses: Vec<f64>,
}

impl EmbeddingArtifacts {
    /// Trains on `corpus_text` (one sentence per line).
    pub fn train(corpus_text: &str, config: &SkipGramConfig) -> Result<Self, HarnessError> {
        let corpus = Corpus::parse(corpus_text);
        let vocab = Vocab::build(corpus.sentences().iter().map(|s| s.as_slice()), config.min_count);
        let (words, epoch_losses) = train_skipgram(&corpus, &vocab, config)?;
        Ok(Self {
            sha256: sha256_hex(&embeddings_bytes(&words)?),
            words,
            corpus_sha256: sha256_hex(corpus_text.as_bytes()),
            epoch_losses,
        })
    }

    pub fn save(&self, path: &Path, config: &SkipGramConfig) -> Result<(), HarnessError> {
        write_file(path, &embeddings_bytes(&self.words)?)?;
        let side = EmbeddingSidecar {
            corpus_sha256: self.corpus_sha256.clone(),
            sha256: self.sha256.clone(),
            config: *config,
            epoch_losses: self.epoch_losses.clone(),
        };
        write_file(&sidecar(path), serde_json::to_string_pretty(&side)?.as_bytes())
    }

    /// Loads word vectors; the corpus hash comes from the sidecar if present.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let words = WordEmbeddings::load(path)?;
        let side: Option<EmbeddingSidecar> =
            fs::read_to_string(sidecar(path)).ok().and_then(|t| serde_json::from_str(&t).ok());
        Ok(Self {
            sha256: sha256_hex(&embeddings_bytes(&words)?),
            words,
            corpus_sha256: side.as_ref().map(|s| s.corpus_sha256.clone()).unwrap_or_default(),
            epoch_losses: side.map(|s| s.epoch_losses).unwrap_or_default(),
        })
    }
}

/// Mean and standard error across seeds of each seed's mean evaluation
/// score over the last 10% of `total_steps`.
pub fn final_window_stats(records: &[RunRecord], total_steps: u64) -> (f64, f64) {
    let mut per_seed: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_eval() && r.step * 10 >= total_steps * 9) {
        let e = per_seed.entry(r.seed).or_default();
        e.0 += r.env_score;
        e.1 += 1;
    }
    let means: Vec<f64> = per_seed.values().map(|(s, n)| s / *n as f64).collect();
    mean_stderr(&means)
}

pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn load_commands(config: &ExperimentConfig) -> Result<(CommandSet, String), HarnessError> {
    match &config.commands {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            Ok((CommandSet::from_json(&text)?, sha256_hex(text.as_bytes())))
        }
        None => Ok((CommandSet::original(), sha256_hex(ORIGINAL_COMMANDS_JSON.as_bytes()))),
    }
}

fn random_rows(config: &ExperimentConfig, seed: u64) -> Result<Vec<RunRecord>, HarnessError> {
    let a = &config.agent;
    let stats = evaluate(Policy::Random, &mut NoShaping::default(), a.eval_episodes, a.eval_seed, a.horizon)?;
    Ok(config
        .eval_steps()
        .into_iter()
        .flat_map(|step| {
            stats.iter().enumerate().map(move |(i, s)| RunRecord {
                step,
                worker: "eval".into(),
                episode: i as u64,
                env_score: s.env_score,
                shaped_return: s.shaped_return,
                instr_completions: s.instr_completions,
                variant: Variant::Random.name().into(),
                seed,
            })
        })
        .collect())
}

fn run_seeds(
    config: &ExperimentConfig,
    registry: &ShaperRegistry,
    records: &mut Vec<RunRecord>,
    prov: &mut Provenance,
    log: &mut dyn FnMut(&str),
) -> Result<RunSummary, HarnessError> {
    let out = &config.output;
    let (commands, commands_sha) = load_commands(config)?;
    prov.commands_sha256 = commands_sha;
    let mem = if config.variant.needs_mem() {
        let art = prepare_mem(config, Some(&out.join("artifacts")), log)?;
        prov.corpus_sha256 = art.corpus_sha256.clone();
        prov.embeddings_sha256 = art.embeddings_sha256.clone();
        prov.dataset_sha256 = art.dataset_sha256.clone();
        prov.mem_sha256 = Some(art.mem_sha256.clone());
        Some(Arc::new(art.mem))
    } else {
        None
    };
    let ctx = ShaperContext {
        mem,
        commands,
        tau: config.tau,
        bonus: config.bonus,
    };

    for &seed in &config.seeds {
        let Some(shaper) = config.variant.shaper() else {
            records.extend(random_rows(config, seed)?);
            continue;
        };
        log(&format!("seed {seed}: training {} agent", config.variant));
        let mut partial = Vec::new();
        let result = train(&config.agent, shaper, registry, &ctx, seed, |step, evals| {
            if let Some(last) = evals.last().filter(|r| r.step == step) {
                let at: Vec<f64> = evals.iter().filter(|r| r.step == step).map(|r| r.env_score).collect();
                let mean = at.iter().sum::<f64>() / at.len() as f64;
                log(&format!("seed {seed} step {}: eval mean {mean:.2}", last.step));
            }
            partial = evals.to_vec();
        });
        let trained = match result {
            Ok(t) => t,
            Err(e) => {
                records.extend(partial);
                return Err(e.into());
            }
        };
        records.extend(trained.records);
        let ckpt = out.join(format!("agent_seed{seed}.bin"));
        trained.net.save(
            &ckpt,
            serde_json::json!({
                "variant": config.variant.name(),
                "seed": seed,
                "mem_sha256": prov.mem_sha256,
                "config_sha256": prov.config_sha256,
                "updates": trained.updates,
                "env_steps": trained.env_steps,
            }),
        )?;
        let bytes = fs::read(&ckpt).map_err(|e| HarnessError::io(&ckpt, e))?;
        prov.agents.insert(seed.to_string(), sha256_hex(&bytes));
    }

    let (final_mean, final_stderr) = final_window_stats(records, config.agent.total_steps);
    Ok(RunSummary {
        variant: config.variant.name().into(),
        seeds: config.seeds.clone(),
        final_mean,
        final_stderr,
        mem_hash: prov.mem_sha256.clone(),
    })
}

/// Runs every seed of an experiment and writes `config.json`, `curve.csv`,
/// `summary.json`, `provenance.json` and checkpoints into `config.output`.
/// On failure the records gathered so far are still written, next to a
/// [`FAILURE_MARKER`] file holding the error.
pub fn run_experiment(
    config: &ExperimentConfig,
    registry: &ShaperRegistry,
    log: &mut dyn FnMut(&str),
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    if let Some(name) = config.variant.shaper() {
        if !registry.contains(name) {
            return Err(HarnessError::Config(format!("no shaper registered as {name:?}")));
        }
    }
    let out = &config.output;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let marker = out.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| HarnessError::io(&marker, e))?;
    }
    let config_json = config.to_json();
    write_file(&out.join("config.json"), config_json.as_bytes())?;

    let mut records = Vec::new();
    let mut prov = Provenance {
        config_sha256: sha256_hex(config_json.as_bytes()),
        ..Default::default()
    };
    let result = run_seeds(config, registry, &mut records, &mut prov, log);
    write_curve(&out.join("curve.csv"), &records)?;
    write_file(&out.join("provenance.json"), serde_json::to_string_pretty(&prov)?.as_bytes())?;
    match result {
        Ok(summary) => {
            write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
            Ok(summary)
        }
        Err(e) => {
            write_file(&marker, e.to_string().as_bytes())?;
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_row(step: u64, seed: u64, score: f64) -> RunRecord {
        RunRecord {
            step,
            worker: "eval".into(),
            episode: 0,
            env_score: score,
            shaped_return: score,
            instr_completions: 0,
            variant: "none".into(),
            seed,
        }
    }

    #[test]
    fn final_window_uses_last_tenth_per_seed() {
        let mut rows = Vec::new();
        for (seed, late) in [(1, 4.0), (2, 6.0), (3, 8.0)] {
            rows.push(eval_row(0, seed, 100.0));
            rows.push(eval_row(80, seed, 100.0));
            rows.push(eval_row(90, seed, late));
            rows.push(eval_row(100, seed, late));
        }
        let mut train_row = eval_row(100, 1, 1000.0);
        train_row.worker = "0".into();
        rows.push(train_row);
        let (mean, se) = final_window_stats(&rows, 100);
        assert!((mean - 6.0).abs() < 1e-12);
        assert!((se - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_value_has_zero_stderr() {
        assert_eq!(mean_stderr(&[3.0]), (3.0, 0.0));
        assert!(mean_stderr(&[]).0.is_nan());
    }
}
