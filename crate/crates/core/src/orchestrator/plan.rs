//! The strategy × budget × dataset × fold grid.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::cell_seed;
use crate::strategies::{StrategyError, StrategyId};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no {0} given")]
    Empty(&'static str),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("unknown dataset {name:?}; known: {}", .known.join(", "))]
    UnknownDataset { name: String, known: Vec<String> },
    #[error("duplicate {kind} {value:?}")]
    Duplicate { kind: &'static str, value: String },
    #[error("budget sizes must be positive")]
    ZeroBudget,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    /// Reuse models for shared stage prefixes within a (dataset, fold).
    #[default]
    Prefix,
    /// Retrain every stage of every cell.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCell {
    pub dataset: String,
    pub strategy: StrategyId,
    pub budget_k: usize,
    pub fold: usize,
    pub seed: u64,
    /// Trained once per (dataset, fold); the result is shared by every budget.
    pub budget_invariant: bool,
}

impl RunCell {
    pub fn key(&self) -> (String, String, usize, usize) {
        (self.dataset.clone(), self.strategy.name(), self.budget_k, self.fold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPlan {
    pub cells: Vec<RunCell>,
    pub master_seed: u64,
    pub backend_id: String,
    pub cache_policy: CachePolicy,
    pub datasets: Vec<String>,
    pub strategies: Vec<StrategyId>,
    pub budgets: Vec<usize>,
    pub n_folds: usize,
}

impl GridPlan {
    pub fn with_backend(mut self, backend_id: impl Into<String>) -> Self {
        self.backend_id = backend_id.into();
        self
    }

    pub fn with_cache_policy(mut self, policy: CachePolicy) -> Self {
        self.cache_policy = policy;
        self
    }

    /// Cells that need their own training and evaluation; the rest replicate
    /// a budget-invariant result.
    pub fn distinct_evaluations(&self) -> usize {
        let invariant: BTreeSet<(&str, StrategyId, usize)> = self
            .cells
            .iter()
            .filter(|c| c.budget_invariant)
            .map(|c| (c.dataset.as_str(), c.strategy, c.fold))
            .collect();
        self.cells.iter().filter(|c| !c.budget_invariant).count() + invariant.len()
    }

    /// Fails on datasets not in `known`.
    pub fn check_datasets(&self, known: &[String]) -> Result<(), PlanError> {
        for d in &self.datasets {
            if !known.contains(d) {
                return Err(PlanError::UnknownDataset {
                    name: d.clone(),
                    known: known.to_vec(),
                });
            }
        }
        Ok(())
    }
}

fn unique<T: Ord + Clone + ToString>(items: &[T], kind: &'static str) -> Result<(), PlanError> {
    let mut seen = BTreeSet::new();
    for i in items {
        if !seen.insert(i.clone()) {
            return Err(PlanError::Duplicate {
                kind,
                value: i.to_string(),
            });
        }
    }
    Ok(())
}

/// Full Cartesian grid in (dataset, fold, strategy, budget) order, strategies
/// in canonical order regardless of input order.
pub fn plan_grid(
    datasets: &[String],
    strategies: &[String],
    budgets: &[usize],
    n_folds: usize,
    master_seed: u64,
) -> Result<GridPlan, PlanError> {
    if datasets.is_empty() {
        return Err(PlanError::Empty("datasets"));
    }
    if strategies.is_empty() {
        return Err(PlanError::Empty("strategies"));
    }
    if budgets.is_empty() {
        return Err(PlanError::Empty("budgets"));
    }
    if n_folds == 0 {
        return Err(PlanError::Empty("folds"));
    }
    if budgets.contains(&0) {
        return Err(PlanError::ZeroBudget);
    }
    unique(datasets, "dataset")?;
    unique(budgets, "budget")?;
    let mut ids = strategies
        .iter()
        .map(|s| s.parse::<StrategyId>())
        .collect::<Result<Vec<_>, _>>()?;
    unique(&ids.iter().map(|s| s.name()).collect::<Vec<_>>(), "strategy")?;
    ids.sort_by_key(|s| s.rank());

    let mut cells = Vec::with_capacity(datasets.len() * n_folds * ids.len() * budgets.len());
    for dataset in datasets {
        for fold in 0..n_folds {
            for &strategy in &ids {
                for &budget_k in budgets {
                    cells.push(RunCell {
                        dataset: dataset.clone(),
                        strategy,
                        budget_k,
                        fold,
                        seed: cell_seed(master_seed, dataset, &strategy.name(), budget_k, fold),
                        budget_invariant: strategy.budget_invariant(),
                    });
                }
            }
        }
    }
    Ok(GridPlan {
        cells,
        master_seed,
        backend_id: String::new(),
        cache_policy: CachePolicy::default(),
        datasets: datasets.to_vec(),
        strategies: ids,
        budgets: budgets.to_vec(),
        n_folds,
    })
}
