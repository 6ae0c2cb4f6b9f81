use std::collections::BTreeMap;
use std::path::Path;

use qabudget::dataset::{QaDataset, TextCorpus};
use qabudget::evaluation::{CellResult, CellStatus};
use qabudget::orchestrator::runner::plan_status;
use qabudget::orchestrator::{plan_grid, read_ledger, run, CachePolicy, GridPlan, RunInputs, ScoreTable, StageConfigs};
use qabudget::strategies::{MergeOptions, StrategyId, DEFAULT_OVERSAMPLE};
use qabudget::synthetic::{generate, SyntheticProfile};
use qabudget::trainer::{
    Backend, BackendFactory, BuiltinBackend, BuiltinFactory, CallLog, Capability, ModelHandle, PredictItem, TrainConfig,
    TrainerError,
};

fn inputs() -> RunInputs {
    let mut far = SyntheticProfile::by_name("synth-far").unwrap();
    far.n_examples = 160;
    far.name = "beta".into();
    let mut targets = BTreeMap::new();
    targets.insert("alpha".to_string(), generate(&SyntheticProfile::separable("alpha", 160), 1));
    targets.insert("beta".to_string(), generate(&far, 2));
    RunInputs {
        targets,
        general: generate(&SyntheticProfile::separable("gen", 300), 3),
        test_size: 40,
        merge_options: MergeOptions {
            oversample_factor: DEFAULT_OVERSAMPLE,
            replacement: Default::default(),
        },
        stage_configs: StageConfigs::uniform(TrainConfig::builtin_default().with_epochs(5)),
    }
}

fn plan(strategies: &[&str]) -> GridPlan {
    let names: Vec<String> = if strategies.is_empty() {
        StrategyId::all().into_iter().map(StrategyId::name).collect()
    } else {
        strategies.iter().map(|s| s.to_string()).collect()
    };
    plan_grid(&["alpha".into(), "beta".into()], &names, &[25, 50, 100], 2, 77).unwrap()
}

fn comparable(cells: &[CellResult]) -> Vec<String> {
    let mut out: Vec<String> = cells
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.wall_time_s = 0.0;
            serde_json::to_string(&c).unwrap()
        })
        .collect();
    out.sort();
    out
}

fn run_fresh(plan: &GridPlan, factory: &dyn BackendFactory, workers: usize) -> Vec<CellResult> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.jsonl");
    run(plan, &inputs(), factory, &path, workers).unwrap();
    read_ledger(&path).unwrap()
}

#[test]
fn every_cell_is_recorded_once() {
    let p = plan(&[]);
    let cells = run_fresh(&p, &BuiltinFactory::default(), 2);
    assert_eq!(cells.len(), 2 * 18 * 3 * 2);
    assert!(cells.iter().all(|c| c.status == CellStatus::Ok));
    assert_eq!(plan_status(&p, &cells), (0, 0));
    for c in &cells {
        assert!((0.0..=100.0).contains(&c.macro_f1_pct));
        assert!(c.em_pct <= c.macro_f1_pct + 1e-9);
    }
}

#[test]
fn runs_are_deterministic_across_worker_counts() {
    let p = plan(&["TargetQA", "MLM-MW", "SQuAD-MPO"]);
    let a = run_fresh(&p, &BuiltinFactory::default(), 1);
    let b = run_fresh(&p, &BuiltinFactory::default(), 4);
    assert_eq!(comparable(&a), comparable(&b));
}

#[test]
fn prefix_cache_does_not_change_results() {
    let p = plan(&[]);
    let cached = run_fresh(&p, &BuiltinFactory::default(), 2);
    let uncached = run_fresh(&p.clone().with_cache_policy(CachePolicy::None), &BuiltinFactory::default(), 2);
    assert_eq!(comparable(&cached), comparable(&uncached));
}

fn count(log: &CallLog, entry: &str) -> usize {
    log.lock().unwrap().iter().filter(|e| *e == entry).count()
}

#[test]
fn shared_prefixes_train_once_per_dataset_and_fold() {
    let log = CallLog::default();
    let factory = BuiltinFactory {
        capabilities: None,
        call_log: Some(log.clone()),
    };
    run_fresh(&plan(&[]), &factory, 1);
    let units = 2 * 2;
    assert_eq!(count(&log, "train_mlm alpha []") + count(&log, "train_mlm beta []"), units);
    assert_eq!(count(&log, "train_qa gen []"), units);
    assert_eq!(count(&log, "train_qa gen [MLM]"), units);

    let log = CallLog::default();
    let factory = BuiltinFactory {
        capabilities: None,
        call_log: Some(log.clone()),
    };
    run_fresh(&plan(&[]).with_cache_policy(CachePolicy::None), &factory, 1);
    // SQuAD once (budget-invariant), then SQuAD-TargetQA, SQuAD-MP, SQuAD-MPO at every budget
    assert_eq!(count(&log, "train_qa gen []"), units * (1 + 3 * 3));
}

#[test]
fn general_only_rows_are_constant_across_budgets() {
    let cells = run_fresh(&plan(&[]), &BuiltinFactory::default(), 2);
    let t = ScoreTable::from_cells(&cells).unwrap();
    for d in ["alpha", "beta"] {
        for s in StrategyId::all().into_iter().filter(|s| s.budget_invariant()) {
            let row: Vec<f64> = [25, 50, 100].iter().map(|&k| t.get(d, s, k).unwrap()).collect();
            assert!(row.iter().all(|v| *v == row[0]), "{d} {s}: {row:?}");
        }
    }
}

#[test]
fn resume_completes_an_interrupted_run() {
    let p = plan(&["SQuAD", "TargetQA", "MLM-MWO"]);
    let reference = run_fresh(&p, &BuiltinFactory::default(), 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.jsonl");
    let full = std::fs::read_to_string(write_ledger(&reference, dir.path())).unwrap();
    let keep: Vec<&str> = full.lines().take(7).collect();
    std::fs::write(&path, format!("{}\n{{\"dataset\":\"alp", keep.join("\n"))).unwrap();

    let summary = run(&p, &inputs(), &BuiltinFactory::default(), &path, 2).unwrap();
    assert_eq!(summary.resumed, 7);
    assert_eq!(summary.executed, p.cells.len() - 7);
    let resumed = read_ledger(&path).unwrap();
    assert_eq!(comparable(&resumed), comparable(&reference));

    let again = run(&p, &inputs(), &BuiltinFactory::default(), &path, 2).unwrap();
    assert_eq!(again.executed, 0);
    assert_eq!(again.resumed, p.cells.len());
}

fn write_ledger(cells: &[CellResult], dir: &Path) -> std::path::PathBuf {
    let path = dir.join("reference.jsonl");
    let mut w = qabudget::orchestrator::LedgerWriter::open(&path).unwrap();
    for c in cells {
        w.append(c).unwrap();
    }
    path
}

/// Builtin backend whose process "dies" whenever it is asked to train on a
/// whole-general merge.
struct Flaky(BuiltinBackend);

impl Backend for Flaky {
    fn backend_id(&self) -> &str {
        self.0.backend_id()
    }
    fn capabilities(&self) -> &[Capability] {
        self.0.capabilities()
    }
    fn base_model(&mut self) -> Result<ModelHandle, TrainerError> {
        self.0.base_model()
    }
    fn train_mlm(&mut self, h: &ModelHandle, c: &TextCorpus, cfg: &TrainConfig) -> Result<ModelHandle, TrainerError> {
        self.0.train_mlm(h, c, cfg)
    }
    fn train_qa(&mut self, h: &ModelHandle, d: &QaDataset, cfg: &TrainConfig) -> Result<ModelHandle, TrainerError> {
        if d.name.ends_with(":MW") {
            return Err(TrainerError::Transport {
                message: "backend exited".into(),
                diagnostics: "CUDA out of memory".into(),
            });
        }
        self.0.train_qa(h, d, cfg)
    }
    fn save(&mut self, h: &ModelHandle, dir: &Path) -> Result<(), TrainerError> {
        self.0.save(h, dir)
    }
    fn load(&mut self, dir: &Path) -> Result<ModelHandle, TrainerError> {
        self.0.load(dir)
    }
    fn predict(&mut self, h: &ModelHandle, items: &[PredictItem]) -> Result<Vec<(String, String)>, TrainerError> {
        self.0.predict(h, items)
    }
}

struct FlakyFactory;

impl BackendFactory for FlakyFactory {
    fn backend_id(&self) -> String {
        "flaky".into()
    }
    fn create(&self) -> Result<Box<dyn Backend>, TrainerError> {
        Ok(Box::new(Flaky(BuiltinBackend::new())))
    }
}

#[test]
fn failed_cells_are_recorded_and_retried_on_resume() {
    let p = plan(&["TargetQA", "MW", "MLM-MW", "MWO"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.jsonl");
    let summary = run(&p, &inputs(), &FlakyFactory, &path, 1).unwrap();
    let failing = 2 * 2 * 3 * 2;
    assert_eq!(summary.failed, failing);
    assert_eq!(summary.ok, p.cells.len() - failing);
    let cells = read_ledger(&path).unwrap();
    let failed: Vec<&CellResult> = cells.iter().filter(|c| c.status == CellStatus::Failed).collect();
    assert!(failed.iter().all(|c| c.strategy.ends_with("MW")));
    assert!(failed[0].error.as_deref().unwrap().contains("CUDA out of memory"));
    assert_eq!(plan_status(&p, &cells), (0, failing));

    let retry = run(&p, &inputs(), &BuiltinFactory::default(), &path, 1).unwrap();
    assert_eq!(retry.executed, failing);
    assert_eq!(retry.ok, failing);
    assert_eq!(plan_status(&p, &read_ledger(&path).unwrap()), (0, 0));
}

#[test]
fn missing_capabilities_skip_cells() {
    let factory = BuiltinFactory {
        capabilities: Some(vec![Capability::Qa, Capability::Predict]),
        call_log: None,
    };
    let p = plan(&["TargetQA", "MLM-TargetQA"]);
    let cells = run_fresh(&p, &factory, 1);
    for c in &cells {
        let want = if c.strategy.starts_with("MLM-") {
            CellStatus::Skipped
        } else {
            CellStatus::Ok
        };
        assert_eq!(c.status, want, "{}", c.strategy);
    }
}

#[test]
fn too_small_pools_fail_cells_not_the_run() {
    let p = plan_grid(&["alpha".into()], &["TargetQA".into()], &[100, 500], 1, 0).unwrap();
    let cells = run_fresh(&p, &BuiltinFactory::default(), 1);
    let by_k: BTreeMap<usize, CellStatus> = cells.iter().map(|c| (c.budget_k, c.status)).collect();
    assert_eq!(by_k[&100], CellStatus::Ok);
    assert_eq!(by_k[&500], CellStatus::Failed);
}
