//! Answer scoring (exact match, token F1), macro aggregation over a test set,
//! and grouping of grid results.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QaDataset;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction coverage mismatch: missing [{}], unexpected [{}]", missing.join(", "), extra.join(", "))]
    Coverage { missing: Vec<String>, extra: Vec<String> },
    #[error("test set repeats ids: {}", .0.join(", "))]
    DuplicateTestIds(Vec<String>),
    #[error("nothing to aggregate")]
    EmptyGroup,
}

fn is_article(w: &str) -> bool {
    matches!(w, "a" | "an" | "the")
}

/// Lowercase, ASCII punctuation to space, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let spaced: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    spaced
        .split_whitespace()
        .filter(|w| !is_article(w))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_f1(pred: &[&str], gold: &[&str]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token F1 and exact match of `pred` against the best of `golds`.
///
/// `golds` must be non-empty; an empty slice scores `(0.0, 0)`.
pub fn f1_em<S: AsRef<str>>(pred: &str, golds: &[S]) -> (f64, u8) {
    let pred_norm = normalize_answer(pred);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    let mut best = (0.0f64, 0u8);
    for g in golds {
        let g_norm = normalize_answer(g.as_ref());
        let g_tokens: Vec<&str> = g_norm.split_whitespace().collect();
        best.0 = best.0.max(token_f1(&pred_tokens, &g_tokens));
        if g_norm == pred_norm {
            best.1 = 1;
        }
    }
    best
}

/// Predicted answer per QA id. Serialized as a flat JSON object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet(pub BTreeMap<String, String>);

impl PredictionSet {
    pub fn get(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, String)> for PredictionSet {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        PredictionSet(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub f1: f64,
    pub em: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_example: BTreeMap<String, ExampleScore>,
    pub macro_f1: f64,
    pub em_rate: f64,
    pub n: usize,
}

/// Scores `preds` against every QA entry of `test`. Ids must match exactly.
pub fn macro_f1(preds: &PredictionSet, test: &QaDataset) -> Result<EvalReport, EvalError> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = test
        .iter_examples()
        .filter(|e| !seen.insert(e.id))
        .map(|e| e.id.to_string())
        .collect();
    if !dups.is_empty() {
        dups.sort();
        dups.dedup();
        return Err(EvalError::DuplicateTestIds(dups));
    }
    let missing: Vec<String> = test
        .iter_examples()
        .filter(|e| preds.get(e.id).is_none())
        .map(|e| e.id.to_string())
        .collect();
    let extra: Vec<String> = preds.0.keys().filter(|id| !seen.contains(id.as_str())).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::Coverage { missing, extra });
    }

    let mut per_example = BTreeMap::new();
    for e in test.iter_examples() {
        let golds: Vec<&str> = e.answers.iter().map(|a| a.text.as_str()).collect();
        let (f1, em) = f1_em(preds.get(e.id).unwrap_or_default(), &golds);
        per_example.insert(e.id.to_string(), ExampleScore { f1, em });
    }
    let n = per_example.len();
    let (sum_f1, sum_em) = per_example
        .values()
        .fold((0.0, 0.0), |(f, m), s| (f + s.f1, m + f64::from(s.em)));
    let denom = n.max(1) as f64;
    Ok(EvalReport {
        per_example,
        macro_f1: sum_f1 / denom,
        em_rate: sum_em / denom,
        n,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    #[default]
    Ok,
    Failed,
    /// The backend lacks a capability the pipeline needs.
    Skipped,
}

/// Outcome of one grid cell, one line of the results ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub strategy: String,
    pub budget_k: usize,
    pub fold: usize,
    pub seed: u64,
    pub macro_f1_pct: f64,
    pub em_pct: f64,
    pub wall_time_s: f64,
    #[serde(default)]
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CellResult {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn key(&self) -> (&str, &str, usize, usize) {
        (&self.dataset, &self.strategy, self.budget_k, self.fold)
    }
}

/// Which cell coordinates are kept as group keys; the rest are averaged over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupBy {
    pub dataset: bool,
    pub strategy: bool,
    pub budget: bool,
    pub fold: bool,
}

impl GroupBy {
    /// Averages over folds only.
    pub fn fold_mean() -> Self {
        GroupBy {
            dataset: true,
            strategy: true,
            budget: true,
            fold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub dataset: Option<String>,
    pub strategy: Option<String>,
    pub budget_k: Option<usize>,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: GroupKey,
    pub mean_f1_pct: f64,
    pub mean_em_pct: f64,
    pub n: usize,
}

/// Arithmetic means of the successful cells within each group, rows sorted by key.
pub fn aggregate(cells: &[CellResult], group_by: GroupBy) -> Result<Vec<AggregateRow>, EvalError> {
    let mut groups: BTreeMap<GroupKey, (f64, f64, usize)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.is_ok()) {
        let key = GroupKey {
            dataset: group_by.dataset.then(|| c.dataset.clone()),
            strategy: group_by.strategy.then(|| c.strategy.clone()),
            budget_k: group_by.budget.then_some(c.budget_k),
            fold: group_by.fold.then_some(c.fold),
        };
        let g = groups.entry(key).or_insert((0.0, 0.0, 0));
        g.0 += c.macro_f1_pct;
        g.1 += c.em_pct;
        g.2 += 1;
    }
    if groups.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    Ok(groups
        .into_iter()
        .map(|(key, (f, e, n))| AggregateRow {
            key,
            mean_f1_pct: f / n as f64,
            mean_em_pct: e / n as f64,
            n,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Answer, Example};

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("The Cat!"), "cat");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("an  apple-tree"), "apple tree");
        assert_eq!(normalize_answer("Theory of an Atom"), "theory of atom");
    }

    #[test]
    fn hand_derived_scores() {
        assert_eq!(f1_em("The CAT.", &["cat"]), (1.0, 1));
        assert_eq!(f1_em("dog", &["cat"]), (0.0, 0));
        let (f1, em) = f1_em("red car", &["car"]);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(em, 0);
    }

    #[test]
    fn empty_token_lists() {
        assert_eq!(f1_em("", &[""]), (1.0, 1));
        assert_eq!(f1_em("the", &["a"]), (1.0, 1));
        assert_eq!(f1_em("", &["x"]), (0.0, 0));
        assert_eq!(f1_em("x", &[""]), (0.0, 0));
    }

    #[test]
    fn best_gold_wins() {
        let (f1, em) = f1_em("new york", &["NYC", "New York City", "new york"]);
        assert_eq!((f1, em), (1.0, 1));
        let (f1, _) = f1_em("new york", &["NYC", "New York City"]);
        assert!((f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn repeated_tokens_count_once_each() {
        let (f1, _) = f1_em("dog dog cat", &["dog cat cat"]);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    fn test_set(ids: &[&str]) -> QaDataset {
        QaDataset::from_examples(
            "t",
            ids.iter().map(|id| Example {
                id: id.to_string(),
                question: "q".into(),
                context: "alpha beta".into(),
                answers: vec![Answer {
                    text: "alpha".into(),
                    answer_start: 0,
                }],
            }),
        )
    }

    fn preds(pairs: &[(&str, &str)]) -> PredictionSet {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn macro_average() {
        let r = macro_f1(&preds(&[("1", "alpha"), ("2", "beta")]), &test_set(&["1", "2"])).unwrap();
        assert_eq!(r.macro_f1, 0.5);
        assert_eq!(r.em_rate, 0.5);
        assert_eq!(r.n, 2);
        let r = macro_f1(&preds(&[("1", "Alpha."), ("2", "alpha")]), &test_set(&["1", "2"])).unwrap();
        assert_eq!((r.macro_f1, r.em_rate), (1.0, 1.0));
    }

    #[test]
    fn coverage_errors() {
        let err = macro_f1(&preds(&[("1", "x"), ("9", "y")]), &test_set(&["1", "2"])).unwrap_err();
        assert_eq!(
            err,
            EvalError::Coverage {
                missing: vec!["2".into()],
                extra: vec!["9".into()]
            }
        );
        let err = macro_f1(&preds(&[("1", "x")]), &test_set(&["1", "1"])).unwrap_err();
        assert_eq!(err, EvalError::DuplicateTestIds(vec!["1".into()]));
    }

    fn cell(dataset: &str, strategy: &str, k: usize, fold: usize, f1: f64) -> CellResult {
        CellResult {
            dataset: dataset.into(),
            strategy: strategy.into(),
            budget_k: k,
            fold,
            seed: 0,
            macro_f1_pct: f1,
            em_pct: 0.0,
            wall_time_s: 0.0,
            status: CellStatus::Ok,
            error: None,
        }
    }

    #[test]
    fn aggregate_over_datasets() {
        let cells: Vec<_> = [("COVID-QA", 55.8), ("CUAD-QA", 35.6), ("MOVIE-QA", 79.3), ("KG-QA", 56.1)]
            .into_iter()
            .map(|(d, v)| cell(d, "SQuAD-TargetQA", 100, 0, v))
            .collect();
        let rows = aggregate(
            &cells,
            GroupBy {
                strategy: true,
                budget: true,
                ..GroupBy::default()
            },
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_f1_pct - 56.70).abs() < 1e-9);
        assert_eq!(rows[0].n, 4);
    }

    #[test]
    fn aggregate_single_cell_and_empty() {
        let rows = aggregate(&[cell("d", "s", 1, 0, 42.0)], GroupBy::fold_mean()).unwrap();
        assert_eq!(rows[0].mean_f1_pct, 42.0);
        assert_eq!(aggregate(&[], GroupBy::fold_mean()), Err(EvalError::EmptyGroup));
        let mut failed = cell("d", "s", 1, 0, 0.0);
        failed.status = CellStatus::Failed;
        assert_eq!(aggregate(&[failed], GroupBy::fold_mean()), Err(EvalError::EmptyGroup));
    }

    #[test]
    fn ledger_line_shape() {
        let line = serde_json::to_string(&cell("d", "MWO", 100, 2, 61.5)).unwrap();
        assert_eq!(
            line,
            r#"{"dataset":"d","strategy":"MWO","budget_k":100,"fold":2,"seed":0,"macro_f1_pct":61.5,"em_pct":0.0,"wall_time_s":0.0,"status":"ok"}"#
        );
        let back: CellResult = serde_json::from_str(
            r#"{"dataset":"d","strategy":"MWO","budget_k":100,"fold":2,"seed":0,"macro_f1_pct":61.5,"em_pct":0.0,"wall_time_s":0.0}"#,
        )
        .unwrap();
        assert!(back.is_ok());
    }
}
