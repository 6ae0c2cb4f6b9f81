//! Grid execution: a pool of workers, each owning one backend, pulls
//! (dataset, fold) units off a queue; a single appender writes the ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ledger::{finished, latest, read_ledger, CellKey, LedgerError, LedgerWriter};
use super::plan::{CachePolicy, GridPlan, PlanError, RunCell};
use crate::dataset::{extract_corpus, QaDataset, TextCorpus};
use crate::evaluation::{macro_f1, CellResult, CellStatus, EvalError, PredictionSet};
use crate::sampling::{derive_seed, kfold_split, BudgetSpec, FoldSplit, SamplingError};
use crate::strategies::{stages_for_with, MergeOptions, StageKind, StrategyError, StrategyId};
use crate::trainer::{Backend, BackendFactory, ModelHandle, PredictItem, TrainConfig, TrainerError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("cannot split dataset {dataset:?}: {source}")]
    Split { dataset: String, source: SamplingError },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Training settings per stage data scale (`corpus`, `general`, `target`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfigs {
    pub corpus: TrainConfig,
    pub general: TrainConfig,
    pub target: TrainConfig,
}

impl StageConfigs {
    pub fn uniform(cfg: TrainConfig) -> Self {
        StageConfigs {
            corpus: cfg.clone(),
            general: cfg.clone(),
            target: cfg,
        }
    }

    pub fn for_scale(&self, scale: &str) -> &TrainConfig {
        match scale {
            "corpus" => &self.corpus,
            "general" => &self.general,
            _ => &self.target,
        }
    }
}

/// Data a run reads; never mutated while the grid executes.
pub struct RunInputs {
    pub targets: BTreeMap<String, QaDataset>,
    pub general: QaDataset,
    pub test_size: usize,
    pub merge_options: MergeOptions,
    pub stage_configs: StageConfigs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub planned: usize,
    /// Cells found finished in the ledger and not repeated.
    pub resumed: usize,
    pub executed: usize,
    /// Budget-invariant cells filled from a result computed at another budget.
    pub replicated: usize,
    pub ok: usize,
    pub failed: usize,
    pub skipped: usize,
    pub stage_trainings: usize,
}

/// Seed of the fold assignment for `dataset`.
pub fn split_seed(master: u64, dataset: &str) -> u64 {
    derive_seed(master, &["split", dataset])
}

/// Seed of the budget sample for a (dataset, fold); shared by every strategy
/// and budget so smaller budgets are prefixes of larger ones.
pub fn budget_seed(master: u64, dataset: &str, fold: usize) -> u64 {
    derive_seed(master, &["budget", dataset, &fold.to_string()])
}

/// Seed of the stage that produces the model identified by `prefix_key`.
pub fn stage_seed(master: u64, dataset: &str, fold: usize, prefix_key: &str) -> u64 {
    derive_seed(master, &["stage", dataset, &fold.to_string(), prefix_key])
}

pub fn make_splits(
    plan: &GridPlan,
    inputs: &RunInputs,
) -> Result<BTreeMap<String, Vec<FoldSplit>>, RunError> {
    let mut out = BTreeMap::new();
    for name in &plan.datasets {
        let d = &inputs.targets[name];
        let folds = kfold_split(d, plan.n_folds, inputs.test_size, split_seed(plan.master_seed, name)).map_err(|source| {
            RunError::Split {
                dataset: name.clone(),
                source,
            }
        })?;
        out.insert(name.clone(), folds);
    }
    Ok(out)
}

#[derive(Debug, Error)]
enum CellError {
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone)]
struct Outcome {
    f1_pct: f64,
    em_pct: f64,
    status: CellStatus,
    error: Option<String>,
}

impl Outcome {
    fn from_error(e: &CellError) -> Self {
        let status = match e {
            CellError::Trainer(t) if t.is_unsupported() => CellStatus::Skipped,
            _ => CellStatus::Failed,
        };
        Outcome {
            f1_pct: 0.0,
            em_pct: 0.0,
            status,
            error: Some(e.to_string()),
        }
    }
}

struct Unit {
    dataset: String,
    fold: usize,
    cells: Vec<RunCell>,
}

enum Msg {
    Cell { result: CellResult, replicated: bool },
    Trained,
}

struct Shared<'a> {
    plan: &'a GridPlan,
    inputs: &'a RunInputs,
    splits: &'a BTreeMap<String, Vec<FoldSplit>>,
    corpora: &'a BTreeMap<String, TextCorpus>,
    factory: &'a dyn BackendFactory,
}

/// A worker's backend, recreated after transport failures.
struct Slot<'a> {
    factory: &'a dyn BackendFactory,
    backend: Option<Box<dyn Backend>>,
}

impl Slot<'_> {
    fn get(&mut self) -> Result<&mut dyn Backend, TrainerError> {
        if self.backend.is_none() {
            self.backend = Some(self.factory.create()?);
        }
        Ok(self.backend.as_deref_mut().expect("just created"))
    }
}

struct UnitState<'d> {
    pool: QaDataset,
    test: QaDataset,
    items: Vec<PredictItem>,
    corpus: &'d TextCorpus,
    base: Option<ModelHandle>,
    cache: HashMap<String, ModelHandle>,
}

fn train_cell(
    cell: &RunCell,
    shared: &Shared<'_>,
    state: &mut UnitState<'_>,
    slot: &mut Slot<'_>,
    tx: &mpsc::Sender<Msg>,
) -> Result<Outcome, CellError> {
    let master = shared.plan.master_seed;
    let budget = BudgetSpec {
        k: cell.budget_k,
        seed: budget_seed(master, &cell.dataset, cell.fold),
    };
    let bound = stages_for_with(
        &cell.strategy.name(),
        &state.pool,
        &shared.inputs.general,
        state.corpus,
        &budget,
        shared.inputs.merge_options,
    )?;
    let backend = slot.get()?;
    let mut h = match &state.base {
        Some(h) => h.clone(),
        None => {
            let h = backend.base_model()?;
            state.base = Some(h.clone());
            h
        }
    };
    let use_cache = shared.plan.cache_policy == CachePolicy::Prefix;
    for (i, stage) in bound.stages().iter().enumerate() {
        let key = bound.prefix_key(i);
        if use_cache {
            if let Some(cached) = state.cache.get(&key) {
                h = cached.clone();
                continue;
            }
        }
        let seed = stage_seed(master, &cell.dataset, cell.fold, &key);
        let cfg = shared.inputs.stage_configs.for_scale(stage.data_scale()).clone().with_seed(seed);
        h = match stage.stage_kind {
            StageKind::Mlm => backend.train_mlm(&h, state.corpus, &cfg)?,
            StageKind::QaFinetune => {
                let data = bound.qa_data(i, derive_seed(seed, &["merge"]))?;
                backend.train_qa(&h, &data, &cfg)?
            }
        };
        let _ = tx.send(Msg::Trained);
        if use_cache {
            state.cache.insert(key, h.clone());
        }
    }
    let preds: PredictionSet = backend.predict(&h, &state.items)?.into_iter().collect();
    let report = macro_f1(&preds, &state.test)?;
    Ok(Outcome {
        f1_pct: 100.0 * report.macro_f1,
        em_pct: 100.0 * report.em_rate,
        status: CellStatus::Ok,
        error: None,
    })
}

fn run_unit(unit: Unit, shared: &Shared<'_>, slot: &mut Slot<'_>, tx: &mpsc::Sender<Msg>) {
    let data = &shared.inputs.targets[&unit.dataset];
    let fold = &shared.splits[&unit.dataset][unit.fold];
    let pool = data.select(unit.dataset.clone(), &fold.train_ids).expect("fold ids come from the dataset");
    let test = data.select(unit.dataset.clone(), &fold.test_ids).expect("fold ids come from the dataset");
    let mut state = UnitState {
        items: PredictItem::from_dataset(&test),
        pool,
        test,
        corpus: &shared.corpora[&unit.dataset],
        base: None,
        cache: HashMap::new(),
    };
    let mut invariant: HashMap<StrategyId, Outcome> = HashMap::new();
    for cell in &unit.cells {
        let start = Instant::now();
        let shared_result = if cell.budget_invariant {
            invariant.get(&cell.strategy).cloned()
        } else {
            None
        };
        let replicated = shared_result.is_some();
        let outcome = match shared_result {
            Some(o) => o,
            None => {
                let o = match train_cell(cell, shared, &mut state, slot, tx) {
                    Ok(o) => o,
                    Err(e) => {
                        log::warn!("{} {} k={} fold={}: {e}", cell.dataset, cell.strategy, cell.budget_k, cell.fold);
                        if matches!(e, CellError::Trainer(TrainerError::Transport { .. })) {
                            // handles die with the process
                            slot.backend = None;
                            state.base = None;
                            state.cache.clear();
                        }
                        Outcome::from_error(&e)
                    }
                };
                if cell.budget_invariant && o.status == CellStatus::Ok {
                    invariant.insert(cell.strategy, o.clone());
                }
                o
            }
        };
        let result = CellResult {
            dataset: cell.dataset.clone(),
            strategy: cell.strategy.name(),
            budget_k: cell.budget_k,
            fold: cell.fold,
            seed: cell.seed,
            macro_f1_pct: outcome.f1_pct,
            em_pct: outcome.em_pct,
            wall_time_s: start.elapsed().as_secs_f64(),
            status: outcome.status,
            error: outcome.error,
        };
        let _ = tx.send(Msg::Cell { result, replicated });
    }
}

/// Executes every cell of `plan` not already finished in the ledger at
/// `ledger_path`, appending one record per executed cell.
pub fn run(
    plan: &GridPlan,
    inputs: &RunInputs,
    factory: &dyn BackendFactory,
    ledger_path: &Path,
    workers: usize,
) -> Result<RunSummary, RunError> {
    let known: Vec<String> = inputs.targets.keys().cloned().collect();
    plan.check_datasets(&known)?;
    let splits = make_splits(plan, inputs)?;
    let corpora: BTreeMap<String, TextCorpus> = plan
        .datasets
        .iter()
        .map(|n| (n.clone(), extract_corpus(&inputs.targets[n])))
        .collect();

    let previous = latest(read_ledger(ledger_path)?);
    let done: BTreeSet<&CellKey> = finished(&previous).collect();
    let mut summary = RunSummary {
        planned: plan.cells.len(),
        ..RunSummary::default()
    };
    let mut units: Vec<Unit> = Vec::new();
    for cell in &plan.cells {
        if done.contains(&cell.key()) {
            summary.resumed += 1;
            continue;
        }
        match units.last_mut() {
            Some(u) if u.dataset == cell.dataset && u.fold == cell.fold => u.cells.push(cell.clone()),
            _ => units.push(Unit {
                dataset: cell.dataset.clone(),
                fold: cell.fold,
                cells: vec![cell.clone()],
            }),
        }
    }
    let mut writer = LedgerWriter::open(ledger_path)?;
    if units.is_empty() {
        return Ok(summary);
    }

    let shared = Shared {
        plan,
        inputs,
        splits: &splits,
        corpora: &corpora,
        factory,
    };
    let n_workers = workers.max(1).min(units.len());
    let queue = Mutex::new(units.into_iter().collect::<VecDeque<_>>());
    let (tx, rx) = mpsc::channel();
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            let tx = tx.clone();
            let (queue, shared) = (&queue, &shared);
            scope.spawn(move || {
                let mut slot = Slot {
                    factory: shared.factory,
                    backend: None,
                };
                loop {
                    let next = queue.lock().expect("queue poisoned").pop_front();
                    match next {
                        Some(unit) => run_unit(unit, shared, &mut slot, &tx),
                        None => break,
                    }
                }
            });
        }
        drop(tx);
        for msg in rx {
            match msg {
                Msg::Trained => summary.stage_trainings += 1,
                Msg::Cell { result, replicated } => {
                    summary.executed += 1;
                    summary.replicated += usize::from(replicated);
                    match result.status {
                        CellStatus::Ok => summary.ok += 1,
                        CellStatus::Failed => summary.failed += 1,
                        CellStatus::Skipped => summary.skipped += 1,
                    }
                    if write_error.is_none() {
                        if let Err(e) = writer.append(&result) {
                            write_error = Some(e);
                        }
                    }
                }
            }
        }
    });
    match write_error {
        Some(e) => Err(e.into()),
        None => Ok(summary),
    }
}

/// Final state of the plan's cells in the ledger: how many are missing or failed.
pub fn plan_status(plan: &GridPlan, ledger: &[CellResult]) -> (usize, usize) {
    let by_key: BTreeMap<CellKey, &CellResult> = ledger
        .iter()
        .map(|c| ((c.dataset.clone(), c.strategy.clone(), c.budget_k, c.fold), c))
        .collect();
    let mut missing = 0;
    let mut failed = 0;
    for cell in &plan.cells {
        match by_key.get(&cell.key()) {
            None => missing += 1,
            Some(c) if c.status == CellStatus::Failed => failed += 1,
            Some(_) => {}
        }
    }
    (missing, failed)
}
