use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use qabudget::analysis::{token_stats, vocab_overlap, StopWords, DEFAULT_TOP_K};
use qabudget::dataset::{extract_corpus, load_squad, save_squad, DatasetError, IdPolicy};
use qabudget::evaluation::{macro_f1, PredictionSet};
use qabudget::orchestrator::runner::{plan_status, split_seed};
use qabudget::orchestrator::{
    plan_from_config, read_ledger, report, run, setup, CachePolicy, ConfigError, ReportFormat, ReportKind, RunConfig,
    ScoreTable, SetupError,
};
use qabudget::sampling::{check_folds, kfold_split, SamplingError, SplitManifest, DEFAULT_FOLDS, DEFAULT_TEST_SIZE};
use qabudget::strategies::{build_merge, MergeKind, MergeStrategy, DEFAULT_OVERSAMPLE};
use qabudget::synthetic::{generate, SyntheticProfile};
use qabudget::trainer::server::serve;
use qabudget::trainer::{BuiltinBackend, Capability};

#[derive(Parser)]
#[command(name = "qabudget", version, about = "Fine-tuning strategy grid for extractive QA under annotation budgets")]
struct Cli {
    /// Master seed for splits, samples and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Results ledger (JSON lines).
    #[arg(long, global = true, default_value = "results.jsonl")]
    ledger: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a SQuAD file and write it back in canonical form.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Dataset name; the file stem by default.
        #[arg(long)]
        name: Option<String>,
        /// Also write the unique contexts as a one-document-per-line corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Check a SQuAD file against the schema and offset rules.
    Validate {
        input: PathBuf,
        /// Allow repeated question ids (merged training sets).
        #[arg(long)]
        multiset: bool,
    },
    /// Token statistics, and vocabulary overlap against a second dataset.
    Analyze {
        input: PathBuf,
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        /// Keep stopwords when ranking terms.
        #[arg(long)]
        keep_stopwords: bool,
    },
    /// Write the k-fold split manifest of a dataset.
    Split {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = DEFAULT_TEST_SIZE)]
        test_size: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Merge a target set with a general set.
    Merge {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        general: PathBuf,
        /// One of TargetQA, MP, MPO, MW, MWO.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = DEFAULT_OVERSAMPLE)]
        oversample: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the grid plan of the configuration.
    Plan {
        /// Write the full plan as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Execute the grid, resuming from the ledger.
    Run {
        #[arg(long)]
        workers: Option<usize>,
        /// Retrain shared stage prefixes for every cell.
        #[arg(long)]
        no_cache: bool,
    },
    /// Score a predictions file against a SQuAD file.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Include per-example scores.
        #[arg(long)]
        per_example: bool,
    },
    /// Summary tables from the ledger.
    Report {
        #[arg(long, default_value = "grid")]
        kind: String,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Read fold-averaged scores from a grid TSV instead of the ledger.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Serve the built-in trainer over the backend protocol on stdin/stdout.
    ServeBuiltin {
        /// Comma-separated subset of mlm,qa,predict.
        #[arg(long, default_value = "mlm,qa,predict")]
        capabilities: String,
    },
    /// Write a synthetic dataset.
    Synth {
        /// synth-general, synth-near, synth-far or synth-separable.
        #[arg(long)]
        profile: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        examples: Option<usize>,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Validation(anyhow::Error),
    FailedCells(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        let validation = e.chain().any(|c| {
            c.downcast_ref::<DatasetError>().is_some_and(|d| !matches!(d, DatasetError::Io { .. }))
                || c.downcast_ref::<ConfigError>().is_some_and(|c| !matches!(c, ConfigError::Io { .. }))
                || c.downcast_ref::<SamplingError>().is_some()
        });
        if validation {
            Failure::Validation(e)
        } else {
            Failure::Usage(e)
        }
    }
}

fn write_out(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    Ok(match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn master_seed(cli: &Cli, cfg: &RunConfig) -> u64 {
    cli.seed.or(cfg.seed).unwrap_or(0)
}

fn name_of(path: &Path) -> String {
    path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest { input, output, name, corpus } => {
            let mut d = load_squad(input, IdPolicy::Unique)?;
            d.name = name.clone().unwrap_or_else(|| name_of(input));
            save_squad(&d, output)?;
            let c = extract_corpus(&d);
            if let Some(p) = corpus {
                fs::write(p, c.to_lines()).with_context(|| format!("cannot write {}", p.display()))?;
            }
            let summary = json!({
                "name": d.name,
                "articles": d.articles.len(),
                "examples": d.len(),
                "documents": c.documents.len(),
                "corpus_size_bytes": c.size_bytes,
            });
            write_out(None, &pretty(&summary))?;
        }
        Command::Validate { input, multiset } => {
            let policy = if *multiset { IdPolicy::Multiset } else { IdPolicy::Unique };
            match load_squad(input, policy) {
                Ok(d) => println!("ok: {} examples", d.len()),
                Err(DatasetError::Validation(issues)) => {
                    for i in issues.iter().take(20) {
                        eprintln!("{i}");
                    }
                    if issues.len() > 20 {
                        eprintln!("... and {} more", issues.len() - 20);
                    }
                    return Err(Failure::Validation(anyhow!("{} validation issue(s)", issues.len())));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Analyze {
            input,
            against,
            top_k,
            keep_stopwords,
        } => {
            let d = load_squad(input, IdPolicy::Multiset)?;
            let mut out = json!({ "dataset": name_of(input), "stats": token_stats(&d) });
            if let Some(other) = against {
                let o = load_squad(other, IdPolicy::Multiset)?;
                let stop = if *keep_stopwords { StopWords::none() } else { StopWords::english() };
                let overlap = vocab_overlap(&extract_corpus(&d), &extract_corpus(&o), *top_k, &stop)?;
                out["against"] = json!(name_of(other));
                out["overlap"] = serde_json::to_value(overlap)?;
            }
            write_out(None, &pretty(&out))?;
        }
        Command::Split {
            input,
            folds,
            test_size,
            output,
        } => {
            let cfg = load_config(cli)?;
            let seed = master_seed(cli, &cfg);
            let d = load_squad(input, IdPolicy::Unique)?;
            let name = name_of(input);
            let folds = kfold_split(&d, *folds, *test_size, split_seed(seed, &name))?;
            check_folds(&d, &folds, *test_size).map_err(|e| Failure::Validation(anyhow!(e)))?;
            let manifest = SplitManifest {
                dataset: name,
                seed,
                folds,
            };
            write_out(output.as_deref(), &pretty(&manifest))?;
        }
        Command::Merge {
            target,
            general,
            kind,
            oversample,
            output,
        } => {
            let cfg = load_config(cli)?;
            let kind: MergeKind = kind.parse().map_err(|e: String| anyhow!(e))?;
            let t = load_squad(target, IdPolicy::Unique)?;
            let g = load_squad(general, IdPolicy::Unique)?;
            let s = MergeStrategy::new(kind, master_seed(cli, &cfg)).with_oversample_factor(*oversample);
            let merged = build_merge(&t, &g, &s)?;
            save_squad(&merged, output)?;
            println!("{}: {} examples", merged.name, merged.len());
        }
        Command::Plan { output } => {
            let cfg = load_config(cli)?;
            let plan = plan_from_config(&cfg, master_seed(cli, &cfg))?;
            let summary = json!({
                "cells": plan.cells.len(),
                "distinct_evaluations": plan.distinct_evaluations(),
                "datasets": plan.datasets,
                "strategies": plan.strategies.len(),
                "budgets": plan.budgets,
                "folds": plan.n_folds,
                "master_seed": plan.master_seed,
                "backend_id": plan.backend_id,
                "cache_policy": plan.cache_policy,
            });
            write_out(None, &pretty(&summary))?;
            if let Some(p) = output {
                write_out(Some(p), &pretty(&plan))?;
            }
        }
        Command::Run { workers, no_cache } => {
            let mut cfg = load_config(cli)?;
            if *no_cache {
                cfg.cache = CachePolicy::None;
            }
            if let Some(w) = workers {
                cfg.workers = *w;
            }
            let (plan, inputs) = setup(&cfg, master_seed(cli, &cfg)).map_err(|e| match e {
                SetupError::Config(c) => Failure::from(c),
                SetupError::Plan(p) => Failure::Usage(p.into()),
            })?;
            let factory = qabudget::orchestrator::factory_for(&cfg);
            let summary = run(&plan, &inputs, factory.as_ref(), &cli.ledger, cfg.workers)?;
            write_out(None, &pretty(&summary))?;
            let (missing, failed) = plan_status(&plan, &read_ledger(&cli.ledger)?);
            if failed + missing > 0 {
                return Err(Failure::FailedCells(format!("{failed} failed and {missing} missing cell(s)")));
            }
        }
        Command::Evaluate {
            dataset,
            predictions,
            per_example,
        } => {
            let d = load_squad(dataset, IdPolicy::Unique)?;
            let raw = fs::read(predictions).with_context(|| format!("cannot read {}", predictions.display()))?;
            let preds: PredictionSet = serde_json::from_slice(&raw)
                .map_err(|e| Failure::Validation(anyhow!("{}: {e}", predictions.display())))?;
            let r = macro_f1(&preds, &d).map_err(|e| Failure::Validation(e.into()))?;
            let mut out = json!({ "n": r.n, "macro_f1_pct": 100.0 * r.macro_f1, "em_pct": 100.0 * r.em_rate });
            if *per_example {
                out["per_example"] = serde_json::to_value(&r.per_example)?;
            }
            write_out(None, &pretty(&out))?;
        }
        Command::Report { kind, format, grid } => {
            let kind: ReportKind = kind.parse()?;
            let format: ReportFormat = format.parse()?;
            let table = match grid {
                Some(p) => ScoreTable::from_tsv(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)
                    .map_err(|e| Failure::Validation(e.into()))?,
                None => ScoreTable::from_cells(&read_ledger(&cli.ledger)?).map_err(|e| Failure::Validation(e.into()))?,
            };
            let r = report(&table, kind).map_err(|e| Failure::Validation(e.into()))?;
            write_out(None, &r.render(format))?;
        }
        Command::ServeBuiltin { capabilities } => {
            let caps = capabilities
                .split(',')
                .map(|c| serde_json::from_value::<Capability>(json!(c.trim())))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| anyhow!("bad capability list {capabilities:?}: {e}"))?;
            let mut backend = BuiltinBackend::new().with_capabilities(&caps);
            serve(&mut backend, io::stdin().lock(), io::stdout().lock())?;
        }
        Command::Synth {
            profile,
            output,
            examples,
        } => {
            let mut p = SyntheticProfile::by_name(profile).ok_or_else(|| anyhow!("unknown profile {profile:?}"))?;
            if let Some(n) = examples {
                p.n_examples = *n;
            }
            let d = generate(&p, cli.seed.unwrap_or(0));
            save_squad(&d, output)?;
            println!("{}: {} examples", d.name, d.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Validation(e)) => {
            eprintln!("invalid input: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::FailedCells(msg)) => {
            eprintln!("run incomplete: {msg}");
            ExitCode::from(3)
        }
    }
}
