//! Seeded budget sampling, uniform sampling from the general dataset, and
//! k-fold splitting.
//!
//! Every function here is a pure function of its inputs and seed. The
//! generator is ChaCha8 seeded from a `u64`; results are reproducible within
//! this implementation but are not meant to match other implementations.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::QaDataset;

/// Annotation budgets explored by default.
pub const DEFAULT_BUDGETS: [usize; 6] = [100, 200, 400, 800, 1200, 1600];
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_TEST_SIZE: usize = 400;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplingError {
    #[error("not enough examples: {required} required, {available} available")]
    Insufficient { required: usize, available: usize },
    #[error("duplicate ids in source dataset: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit seed derived from a master seed and a list of labels.
///
/// SHA-256 over the length-prefixed parts; the first eight digest bytes are
/// read little-endian.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Seed of one grid cell.
pub fn cell_seed(master: u64, dataset: &str, strategy: &str, budget_k: usize, fold: usize) -> u64 {
    derive_seed(
        master,
        &["cell", dataset, strategy, &budget_k.to_string(), &fold.to_string()],
    )
}

/// Forward partial Fisher-Yates: afterwards `items[..k]` is a uniform
/// k-permutation. Draws for position `i` do not depend on `k`, so with the
/// same seed a smaller `k` yields a prefix of a larger one.
pub fn partial_shuffle<T, R: Rng>(items: &mut [T], k: usize, rng: &mut R) {
    let n = items.len();
    for i in 0..k.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub k: usize,
    pub seed: u64,
}

impl BudgetSpec {
    pub fn new(k: usize, seed: u64) -> Result<Self, SamplingError> {
        if k == 0 {
            return Err(SamplingError::InvalidArgument("budget must be positive".into()));
        }
        if !DEFAULT_BUDGETS.contains(&k) {
            log::warn!("budget {k} is outside the default ladder {DEFAULT_BUDGETS:?}");
        }
        Ok(BudgetSpec { k, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    #[serde(rename = "fold")]
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Split manifest persisted next to a run so it can be replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset: String,
    pub seed: u64,
    pub folds: Vec<FoldSplit>,
}

fn unique_ids(d: &QaDataset) -> Result<Vec<String>, SamplingError> {
    let ids = d.ids();
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = ids.iter().filter(|id| !seen.insert(id.as_str())).cloned().collect();
    if dups.is_empty() {
        Ok(ids)
    } else {
        dups.sort();
        dups.dedup();
        Err(SamplingError::DuplicateIds(dups))
    }
}

/// Splits `d` into `n_folds` folds with disjoint test sets of `test_size`
/// examples each. Test and train ids are listed in document order.
pub fn kfold_split(
    d: &QaDataset,
    n_folds: usize,
    test_size: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>, SamplingError> {
    if n_folds == 0 || test_size == 0 {
        return Err(SamplingError::InvalidArgument(
            "n_folds and test_size must be positive".into(),
        ));
    }
    let ids = unique_ids(d)?;
    let required = n_folds * test_size;
    if required > ids.len() {
        return Err(SamplingError::Insufficient {
            required,
            available: ids.len(),
        });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    partial_shuffle(&mut order, required, &mut rng_from_seed(seed));

    let mut fold_of = vec![usize::MAX; ids.len()];
    for (pos, &idx) in order[..required].iter().enumerate() {
        fold_of[idx] = pos / test_size;
    }
    Ok((0..n_folds)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = ids.iter().zip(&fold_of).partition(|(_, &of)| of == f);
            FoldSplit {
                fold_index: f,
                train_ids: train.into_iter().map(|(id, _)| id.clone()).collect(),
                test_ids: test.into_iter().map(|(id, _)| id.clone()).collect(),
            }
        })
        .collect())
}

/// Draws `spec.k` distinct ids from `train` without replacement. Budgets
/// sampled with the same seed are nested.
pub fn sample_budget(train: &[String], spec: &BudgetSpec) -> Result<Vec<String>, SamplingError> {
    if spec.k > train.len() {
        return Err(SamplingError::Insufficient {
            required: spec.k,
            available: train.len(),
        });
    }
    let mut ids = train.to_vec();
    partial_shuffle(&mut ids, spec.k, &mut rng_from_seed(spec.seed));
    ids.truncate(spec.k);
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    /// Distinct examples; requires `n <= |d|`.
    #[default]
    Without,
    /// Literal i.i.d. draws; repeats are possible.
    With,
}

/// Draws `n` examples uniformly from `d`.
pub fn sample_uniform_iid(
    d: &QaDataset,
    n: usize,
    seed: u64,
    replacement: Replacement,
) -> Result<QaDataset, SamplingError> {
    let name = format!("{}~{}", d.name, n);
    if n == 0 {
        return Ok(QaDataset::empty(name));
    }
    let pool: Vec<_> = d.iter_examples().collect();
    let mut rng = rng_from_seed(seed);
    let picked: Vec<usize> = match replacement {
        Replacement::Without => {
            if n > pool.len() {
                return Err(SamplingError::Insufficient {
                    required: n,
                    available: pool.len(),
                });
            }
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            partial_shuffle(&mut idx, n, &mut rng);
            idx.truncate(n);
            idx
        }
        Replacement::With => {
            if pool.is_empty() {
                return Err(SamplingError::Insufficient {
                    required: 1,
                    available: 0,
                });
            }
            (0..n).map(|_| rng.random_range(0..pool.len())).collect()
        }
    };
    Ok(QaDataset::from_examples(name, picked.into_iter().map(|i| pool[i].to_owned())))
}

/// Checks the structural invariants of a set of folds against their source.
pub fn check_folds(d: &QaDataset, folds: &[FoldSplit], test_size: usize) -> Result<(), String> {
    let all: HashSet<&str> = d.iter_examples().map(|e| e.id).collect();
    let mut test_owner: HashMap<&str, usize> = HashMap::new();
    for f in folds {
        let train: HashSet<&str> = f.train_ids.iter().map(String::as_str).collect();
        let test: HashSet<&str> = f.test_ids.iter().map(String::as_str).collect();
        if f.test_ids.len() != test_size {
            return Err(format!("fold {} has {} test ids", f.fold_index, f.test_ids.len()));
        }
        if !train.is_disjoint(&test) {
            return Err(format!("fold {} train/test overlap", f.fold_index));
        }
        if train.len() + test.len() != all.len() || !train.union(&test).all(|id| all.contains(id)) {
            return Err(format!("fold {} does not cover the dataset", f.fold_index));
        }
        for id in test {
            if let Some(prev) = test_owner.insert(id, f.fold_index) {
                return Err(format!("{id} is in the test sets of folds {prev} and {}", f.fold_index));
            }
        }
    }
    Ok(())
}
