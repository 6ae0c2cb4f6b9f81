//! Grid planning, execution against a backend, the results ledger, and reports.

pub mod config;
pub mod ledger;
pub mod plan;
pub mod report;
pub mod runner;

pub use config::{ConfigError, DatasetSource, RunConfig};
pub use ledger::{read_ledger, LedgerWriter};
pub use plan::{plan_grid, CachePolicy, GridPlan, PlanError, RunCell};
pub use report::{report, ReportFormat, ReportKind, ReportTable, ScoreTable};
pub use runner::{run, RunInputs, RunSummary, StageConfigs};

use std::collections::BTreeMap;

use crate::strategies::StrategyId;
use crate::trainer::{BackendFactory, BuiltinFactory, ProcessFactory};

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// The backend factory a config asks for.
pub fn factory_for(cfg: &RunConfig) -> Box<dyn BackendFactory> {
    match &cfg.backend {
        Some(command) => Box::new(ProcessFactory {
            command: command.clone(),
        }),
        None => Box::new(BuiltinFactory::default()),
    }
}

/// Plans the grid described by `cfg`.
pub fn plan_from_config(cfg: &RunConfig, master_seed: u64) -> Result<GridPlan, PlanError> {
    let strategies = cfg
        .strategies
        .clone()
        .unwrap_or_else(|| StrategyId::all().into_iter().map(StrategyId::name).collect());
    Ok(plan_grid(&cfg.dataset_names(), &strategies, &cfg.budgets, cfg.folds, master_seed)?
        .with_backend(factory_for(cfg).backend_id())
        .with_cache_policy(cfg.cache))
}

/// Loads every dataset `cfg` names and plans its grid.
pub fn setup(cfg: &RunConfig, master_seed: u64) -> Result<(GridPlan, RunInputs), SetupError> {
    cfg.validate()?;
    let plan = plan_from_config(cfg, master_seed)?;
    let mut targets = BTreeMap::new();
    for src in &cfg.datasets {
        targets.insert(src.name.clone(), src.load()?);
    }
    let inputs = RunInputs {
        targets,
        general: cfg.general.load()?,
        test_size: cfg.test_size,
        merge_options: cfg.merge_options(),
        stage_configs: StageConfigs {
            corpus: cfg.stage_config("corpus"),
            general: cfg.stage_config("general"),
            target: cfg.stage_config("target"),
        },
    };
    Ok((plan, inputs))
}
