//! `narrate`: command-line front end for the narration-shaping toolkit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use narrate_core::agents::{evaluate, AgentNet, NoShaping, Policy, RunRecord, ShaperContext, ShaperRegistry};
use narrate_core::harness::{
    compare_runs, generalization_eval, project_embeddings, run_experiment, sha256_hex, train_mem_artifacts,
    write_records, EmbeddingArtifacts, ExperimentConfig, MemArtifacts, ProjectionMethod, Variant,
};
use narrate_core::lexicon::Corpus;
use narrate_core::mem::{evaluate_split, generate_dataset, CommandSet, MemDataset, Split};

#[derive(Debug, Parser)]
#[command(name = "narrate", version, about = "Narration-guided reward shaping on the MicroBuild mini-game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Experiment config JSON; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => Ok(ExperimentConfig::load(p)?),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check corpus size and command-token coverage.
    GenCorpusCheck {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Corpus text, one sentence per line (default: bundled corpus).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        min_sentences: usize,
        #[arg(long, default_value_t = 20)]
        min_occurrences: usize,
    },
    /// Train skip-gram word vectors.
    TrainEmbeddings {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate the labeled (observation, command) dataset.
    GenDataset {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_command: Option<usize>,
        #[arg(long)]
        nulls: Option<usize>,
        #[arg(long)]
        expert_mix: Option<f64>,
    },
    /// Train the mutual-embedding model.
    TrainMem {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a trained embedding model on one dataset split.
    EvalMem {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        mem: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Command-set JSON (default: original commands).
        #[arg(long)]
        commands: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test", "all"])]
        split: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train agents for one variant over one or more seeds.
    TrainAgent {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Training seeds, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mem: Option<PathBuf>,
        #[arg(long)]
        commands: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        bonus: Option<f64>,
        #[arg(long)]
        eval_every: Option<u64>,
        #[arg(long)]
        eval_episodes: Option<usize>,
    },
    /// Play fixed-seed evaluation episodes and print one CSV row each.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Seed of the first evaluation episode.
        #[arg(long)]
        seed: u64,
        /// Agent checkpoint (not needed for the random variant).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the variant stored in the checkpoint.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long)]
        mem: Option<PathBuf>,
        #[arg(long)]
        commands: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        bonus: Option<f64>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run directories into comparison.csv and learning_curves.svg.
    Compare {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, num_args = 2.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Moving-average window over evaluation points.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    /// Project goal-state and command embeddings to 2-D.
    Project {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        mem: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Alternate command-set JSON (default: bundled alternates).
        #[arg(long)]
        alternate: Option<PathBuf>,
        #[arg(long, default_value = "tsne", value_parser = ["pca", "tsne"])]
        method: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure grounding of unseen command phrasings.
    Generalize {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        mem: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        alternate: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: narrate_core::harness::HarnessError| e.to_string())
}

fn log(msg: &str) {
    eprintln!("[narrate] {msg}");
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_commands(path: Option<&Path>, fallback: CommandSet) -> Result<CommandSet> {
    match path {
        Some(p) => CommandSet::load(p).with_context(|| format!("loading commands {}", p.display())),
        None => Ok(fallback),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpusCheck {
            cfg,
            corpus,
            min_sentences,
            min_occurrences,
        } => {
            let config = cfg.load()?;
            let corpus = match corpus.or(config.corpus) {
                Some(p) => Corpus::load(&p).with_context(|| format!("loading corpus {}", p.display()))?,
                None => Corpus::bundled(),
            };
            let mut required: Vec<String> = CommandSet::original()
                .commands()
                .iter()
                .chain(CommandSet::alternate().commands())
                .flat_map(|c| c.tokens())
                .collect();
            required.sort();
            required.dedup();
            let report = corpus.check(&required, min_sentences, min_occurrences);
            print_json(&report)?;
            if !report.passed {
                bail!("corpus check failed: {}", report.failures.join("; "));
            }
        }
        Command::TrainEmbeddings {
            cfg,
            seed,
            out,
            corpus,
            dim,
            epochs,
        } => {
            let mut config = cfg.load()?;
            config.lexicon.seed = seed;
            if let Some(d) = dim {
                config.lexicon.dim = d;
            }
            if let Some(e) = epochs {
                config.lexicon.epochs = e;
            }
            let corpus_path = corpus.or(config.corpus);
            let text = match &corpus_path {
                Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => narrate_core::lexicon::BUNDLED_CORPUS.to_string(),
            };
            log(&format!("training word vectors ({} epochs)", config.lexicon.epochs));
            let art = EmbeddingArtifacts::train(&text, &config.lexicon)?;
            create_parent(&out)?;
            art.save(&out, &config.lexicon)?;
            print_json(&serde_json::json!({
                "out": out,
                "sha256": art.sha256,
                "corpus_sha256": art.corpus_sha256,
                "vocab": art.words.vocab().len(),
                "epoch_losses": art.epoch_losses,
            }))?;
        }
        Command::GenDataset {
            cfg,
            seed,
            out,
            per_command,
            nulls,
            expert_mix,
        } => {
            let mut config = cfg.load()?;
            if let Some(n) = per_command {
                config.dataset.per_command = n;
            }
            if let Some(n) = nulls {
                config.dataset.nulls = n;
            }
            if let Some(m) = expert_mix {
                config.dataset.expert_mix = m;
            }
            log("generating dataset");
            let ds = generate_dataset(&config.dataset, seed)?;
            create_parent(&out)?;
            ds.save(&out)?;
            print_json(&ds.sidecar())?;
        }
        Command::TrainMem {
            cfg,
            seed,
            dataset,
            embeddings,
            out,
            epochs,
            lambda,
            lr,
        } => {
            let mut config = cfg.load()?;
            if let Some(e) = epochs {
                config.mem.epochs = e;
            }
            if let Some(l) = lambda {
                config.mem.lambda = l;
            }
            if let Some(l) = lr {
                config.mem.lr = l;
            }
            let words = EmbeddingArtifacts::load(&embeddings)
                .with_context(|| format!("loading embeddings {}", embeddings.display()))?;
            let ds = MemDataset::load(&dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
            log(&format!("training embedding model for {} epochs", config.mem.epochs));
            let art = train_mem_artifacts(&words, &ds, &config.mem, seed)?;
            create_parent(&out)?;
            art.save(&out)?;
            let best = art.metrics.as_ref().map(|m| m.best().clone());
            print_json(&serde_json::json!({
                "out": out,
                "mem_sha256": art.mem_sha256,
                "dataset_sha256": art.dataset_sha256,
                "embeddings_sha256": art.embeddings_sha256,
                "best": best,
            }))?;
        }
        Command::EvalMem {
            cfg,
            mem,
            dataset,
            commands,
            split,
            threshold,
        } => {
            let config = cfg.load()?;
            let art = MemArtifacts::load(&mem)?;
            let ds = MemDataset::load(&dataset)?;
            let cs = load_commands(commands.as_deref().or(config.commands.as_deref()), CommandSet::original())?;
            let samples = match split.as_str() {
                "train" => ds.samples_in(Split::Train),
                "val" => ds.samples_in(Split::Val),
                "test" => ds.samples_in(Split::Test),
                _ => ds.samples.clone(),
            };
            let m = evaluate_split(&art.mem, &ds, &samples, &cs, threshold.unwrap_or(config.mem.threshold))?;
            print_json(&serde_json::json!({ "split": split, "mem_sha256": art.mem_sha256, "metrics": m }))?;
        }
        Command::TrainAgent {
            cfg,
            seed,
            variant,
            out,
            mem,
            commands,
            steps,
            workers,
            lr,
            tau,
            bonus,
            eval_every,
            eval_episodes,
        } => {
            let mut config = cfg.load()?;
            config.seeds = seed;
            if let Some(v) = variant {
                config.variant = v;
            }
            if let Some(o) = out {
                config.output = o;
            }
            if mem.is_some() {
                config.mem_path = mem;
            }
            if commands.is_some() {
                config.commands = commands;
            }
            if let Some(s) = steps {
                config.agent.total_steps = s;
            }
            if let Some(w) = workers {
                config.agent.workers = w;
            }
            if let Some(l) = lr {
                config.agent.lr = l;
            }
            if let Some(t) = tau {
                config.tau = t;
            }
            if let Some(b) = bonus {
                config.bonus = b;
            }
            if let Some(e) = eval_every {
                config.agent.eval_every = e;
            }
            if let Some(e) = eval_episodes {
                config.agent.eval_episodes = e;
            }
            let summary = run_experiment(&config, &ShaperRegistry::with_builtins(), &mut |m| log(m))?;
            print_json(&summary)?;
        }
        Command::Evaluate {
            cfg,
            seed,
            checkpoint,
            variant,
            episodes,
            mem,
            commands,
            tau,
            bonus,
            out,
        } => {
            let config = cfg.load()?;
            let loaded = match &checkpoint {
                Some(p) => Some(AgentNet::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
                None => None,
            };
            let stored = loaded
                .as_ref()
                .and_then(|(_, meta)| meta.get("variant").and_then(|v| v.as_str()).map(str::to_string));
            let variant = match (variant, stored) {
                (Some(v), _) => v,
                (None, Some(s)) => parse_variant(&s).map_err(anyhow::Error::msg)?,
                (None, None) => config.variant,
            };
            let step = loaded
                .as_ref()
                .and_then(|(_, meta)| meta.get("env_steps").and_then(|v| v.as_u64()))
                .unwrap_or(0);
            let a = &config.agent;
            let stats = match variant.shaper() {
                None => evaluate(Policy::Random, &mut NoShaping::default(), episodes, seed, a.horizon)?,
                Some(name) => {
                    let Some((net, _)) = &loaded else {
                        bail!("variant {variant} needs --checkpoint");
                    };
                    let mem = match mem.or(config.mem_path.clone()) {
                        Some(p) if variant.needs_mem() => Some(Arc::new(MemArtifacts::load(&p)?.mem)),
                        None if variant.needs_mem() => bail!("variant {variant} needs --mem"),
                        _ => None,
                    };
                    let ctx = ShaperContext {
                        mem,
                        commands: load_commands(
                            commands.as_deref().or(config.commands.as_deref()),
                            CommandSet::original(),
                        )?,
                        tau: tau.unwrap_or(config.tau),
                        bonus: bonus.unwrap_or(config.bonus),
                    };
                    let mut shaper = ShaperRegistry::with_builtins().build(name, &ctx)?;
                    evaluate(Policy::Net(net), shaper.as_mut(), episodes, seed, a.horizon)?
                }
            };
            let rows: Vec<RunRecord> = stats
                .iter()
                .enumerate()
                .map(|(i, s)| RunRecord {
                    step,
                    worker: "eval".into(),
                    episode: i as u64,
                    env_score: s.env_score,
                    shaped_return: s.shaped_return,
                    instr_completions: s.instr_completions,
                    variant: variant.name().into(),
                    seed,
                })
                .collect();
            match out {
                Some(p) => {
                    create_parent(&p)?;
                    let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    write_records(std::io::BufWriter::new(f), &rows)?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    write_records(&mut lock, &rows)?;
                    lock.flush()?;
                }
            }
        }
        Command::Compare { cfg, runs, out, window } => {
            cfg.load()?;
            let cmp = compare_runs(&runs, window)?;
            cmp.write(&out)?;
            let finals: Vec<_> = cmp
                .curves
                .iter()
                .map(|c| {
                    let last = c.points.last();
                    serde_json::json!({
                        "run": c.label,
                        "variant": c.variant,
                        "step": last.map(|p| p.step),
                        "mean": last.map(|p| p.mean),
                        "stderr": last.map(|p| p.stderr),
                    })
                })
                .collect();
            print_json(&finals)?;
        }
        Command::Project {
            cfg,
            seed,
            mem,
            dataset,
            alternate,
            method,
            samples,
            out,
        } => {
            cfg.load()?;
            let art = MemArtifacts::load(&mem)?;
            let ds = MemDataset::load(&dataset)?;
            let originals = CommandSet::original();
            let alternates = load_commands(alternate.as_deref(), CommandSet::alternate())?;
            let method = if method == "pca" {
                ProjectionMethod::Pca
            } else {
                ProjectionMethod::Tsne
            };
            log("projecting embeddings");
            let report = project_embeddings(&art.mem, &ds, &originals, &alternates, method, samples, seed)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let names: Vec<String> = originals.texts().iter().map(|s| s.to_string()).collect();
            fs::write(out.join("projection.svg"), report.to_svg(&names))?;
            let json = serde_json::to_string_pretty(&report)?;
            fs::write(out.join("projection.json"), &json)?;
            print_json(&serde_json::json!({
                "mem_sha256": art.mem_sha256,
                "dataset_sha256": ds.hash(),
                "projection_sha256": sha256_hex(json.as_bytes()),
                "separation": report.separation,
                "original_correct": report.original_correct,
                "alternate_correct": report.alternate_correct,
            }))?;
        }
        Command::Generalize {
            cfg,
            mem,
            dataset,
            alternate,
            threshold,
            out,
        } => {
            let config = cfg.load()?;
            let art = MemArtifacts::load(&mem)?;
            let ds = MemDataset::load(&dataset)?;
            let alternates = load_commands(alternate.as_deref(), CommandSet::alternate())?;
            let report = generalization_eval(
                &art.mem,
                &CommandSet::original(),
                &alternates,
                &ds,
                threshold.unwrap_or(config.mem.threshold),
            )?;
            if let Some(p) = out {
                create_parent(&p)?;
                fs::write(&p, serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
