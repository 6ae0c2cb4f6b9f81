//! Report tables computed from fold-averaged scores. Every number is a pure
//! function of the ledger (or of a grid table read back from disk).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ledger::latest;
use crate::evaluation::{aggregate, CellResult, CellStatus, GroupBy};
use crate::strategies::{BaseStrategy, StrategyId};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no successful cells to report on")]
    Empty,
    #[error("missing cells: {}", .0.join(", "))]
    Coverage(Vec<String>),
    #[error("grid table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown report kind {0:?}; expected grid, best_vs_baseline, mlm_delta, zero_shot_gap or budget_doubling")]
    UnknownKind(String),
    #[error("unknown format {0:?}; expected tsv, json or markdown")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Grid,
    BestVsBaseline,
    MlmDelta,
    ZeroShotGap,
    BudgetDoubling,
}

impl ReportKind {
    pub const ALL: [ReportKind; 5] = [
        ReportKind::Grid,
        ReportKind::BestVsBaseline,
        ReportKind::MlmDelta,
        ReportKind::ZeroShotGap,
        ReportKind::BudgetDoubling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Grid => "grid",
            ReportKind::BestVsBaseline => "best_vs_baseline",
            ReportKind::MlmDelta => "mlm_delta",
            ReportKind::ZeroShotGap => "zero_shot_gap",
            ReportKind::BudgetDoubling => "budget_doubling",
        }
    }
}

impl FromStr for ReportKind {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ReportError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Tsv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(ReportError::UnknownFormat(s.to_string())),
        }
    }
}

/// Fold-averaged macro-F1 (percent) per (dataset, strategy, budget).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: BTreeMap<(String, StrategyId, usize), f64>,
    datasets: Vec<String>,
    /// Cells whose latest ledger record is a failure.
    failed: Vec<String>,
}

impl ScoreTable {
    pub fn insert(&mut self, dataset: &str, strategy: StrategyId, budget_k: usize, value: f64) {
        if !self.datasets.iter().any(|d| d == dataset) {
            self.datasets.push(dataset.to_string());
        }
        self.scores.insert((dataset.to_string(), strategy, budget_k), value);
    }

    pub fn get(&self, dataset: &str, strategy: StrategyId, budget_k: usize) -> Option<f64> {
        self.scores.get(&(dataset.to_string(), strategy, budget_k)).copied()
    }

    /// Datasets in first-seen order.
    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn strategies(&self) -> Vec<StrategyId> {
        let present: BTreeSet<usize> = self.scores.keys().map(|(_, s, _)| s.rank()).collect();
        StrategyId::all().into_iter().filter(|s| present.contains(&s.rank())).collect()
    }

    pub fn budgets(&self) -> Vec<usize> {
        let b: BTreeSet<usize> = self.scores.keys().map(|(_, _, k)| *k).collect();
        b.into_iter().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Means over folds of the successful cells; datasets in ledger order.
    /// Only the latest record of each cell counts, and cells that last failed
    /// make every report a coverage error.
    pub fn from_cells(cells: &[CellResult]) -> Result<Self, ReportError> {
        let latest: Vec<CellResult> = latest(cells.to_vec()).into_values().collect();
        let failed = latest
            .iter()
            .filter(|c| c.status == CellStatus::Failed)
            .map(|c| format!("{}/{}/{}/fold{}", c.dataset, c.strategy, c.budget_k, c.fold))
            .collect();
        let rows = aggregate(&latest, GroupBy::fold_mean()).map_err(|_| ReportError::Empty)?;
        let mut order: Vec<&str> = Vec::new();
        for c in cells.iter().filter(|c| c.is_ok()) {
            if !order.contains(&c.dataset.as_str()) {
                order.push(&c.dataset);
            }
        }
        let mut t = ScoreTable {
            datasets: order.iter().map(|s| s.to_string()).collect(),
            failed,
            ..Default::default()
        };
        for r in rows {
            let (Some(d), Some(s), Some(k)) = (r.key.dataset, r.key.strategy, r.key.budget_k) else {
                unreachable!("fold_mean keeps dataset, strategy and budget")
            };
            let strategy: StrategyId = s
                .parse()
                .map_err(|e| ReportError::Parse { line: 0, message: format!("{e}") })?;
            t.insert(&d, strategy, k, r.mean_f1_pct);
        }
        Ok(t)
    }

    /// Reads `dataset<TAB>strategy<TAB>score...` with a header row naming the budgets.
    pub fn from_tsv(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ReportError::Empty)?;
        let budgets: Vec<usize> = header
            .split('\t')
            .skip(2)
            .map(|h| {
                h.trim().parse().map_err(|_| ReportError::Parse {
                    line: 1,
                    message: format!("budget header {h:?} is not a number"),
                })
            })
            .collect::<Result<_, _>>()?;
        let mut t = ScoreTable::default();
        for (i, line) in lines {
            let err = |message: String| ReportError::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != budgets.len() + 2 {
                return Err(err(format!("expected {} fields, found {}", budgets.len() + 2, fields.len())));
            }
            let strategy: StrategyId = fields[1].trim().parse().map_err(|e| err(format!("{e}")))?;
            for (k, v) in budgets.iter().zip(&fields[2..]) {
                let v: f64 = v.trim().parse().map_err(|_| err(format!("score {v:?} is not a number")))?;
                t.insert(fields[0].trim(), strategy, *k, v);
            }
        }
        if t.is_empty() {
            return Err(ReportError::Empty);
        }
        Ok(t)
    }

    /// Every (dataset, strategy, budget) combination of the present axes must exist.
    fn check_rectangular(&self) -> Result<(), ReportError> {
        let mut missing = self.failed.clone();
        for d in &self.datasets {
            for s in self.strategies() {
                for k in self.budgets() {
                    if self.get(d, s, k).is_none() {
                        missing.push(format!("{d}/{s}/{k}"));
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ReportError::Coverage(missing))
        }
    }

    fn at(&self, d: &str, s: StrategyId, k: usize) -> f64 {
        self.get(d, s, k).expect("coverage checked")
    }

    /// Highest-scoring strategy, ties to canonical order.
    fn best(&self, d: &str, k: usize) -> (StrategyId, f64) {
        let mut best: Option<(StrategyId, f64)> = None;
        for s in self.strategies() {
            let v = self.at(d, s, k);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((s, v));
            }
        }
        best.expect("at least one strategy")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub kind: ReportKind,
    pub title: String,
    pub label_columns: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    fn new(kind: ReportKind, title: &str, label_columns: &[&str], columns: Vec<String>) -> Self {
        ReportTable {
            kind,
            title: title.to_string(),
            label_columns: label_columns.iter().map(|s| s.to_string()).collect(),
            columns,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, labels: &[&str], values: Vec<f64>) {
        self.rows.push(ReportRow {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            values,
        });
    }

    /// Value at the row whose labels equal `labels` and the named column.
    pub fn value(&self, labels: &[&str], column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows
            .iter()
            .find(|r| r.labels.iter().map(String::as_str).eq(labels.iter().copied()))
            .map(|r| r.values[c])
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Tsv => self.to_tsv(),
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("reports serialize") + "\n",
            ReportFormat::Markdown => self.to_markdown(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.label_columns.iter().chain(&self.columns).map(String::as_str).collect();
        out.push_str(&header.join("\t"));
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r
                .labels
                .iter()
                .cloned()
                .chain(r.values.iter().map(|v| format!("{v:.4}")))
                .collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        let header: Vec<&str> = self.label_columns.iter().chain(&self.columns).map(String::as_str).collect();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let rule: Vec<&str> = self
            .label_columns
            .iter()
            .map(|_| "---")
            .chain(self.columns.iter().map(|_| "---:"))
            .collect();
        let _ = writeln!(out, "|{}|", rule.join("|"));
        for r in &self.rows {
            let cells: Vec<String> = r
                .labels
                .iter()
                .cloned()
                .chain(r.values.iter().map(|v| format!("{v:.2}")))
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn require(t: &ScoreTable, s: StrategyId) -> Result<(), ReportError> {
    if t.strategies().contains(&s) {
        Ok(())
    } else {
        Err(ReportError::Coverage(vec![format!("*/{s}/*")]))
    }
}

fn with_avg(mut v: Vec<f64>) -> Vec<f64> {
    v.push(mean(v.clone()));
    v
}

pub fn report(t: &ScoreTable, kind: ReportKind) -> Result<ReportTable, ReportError> {
    if t.is_empty() {
        return Err(ReportError::Empty);
    }
    t.check_rectangular()?;
    let budgets = t.budgets();
    let datasets = t.datasets();
    let baseline = StrategyId {
        base: BaseStrategy::SquadTargetQa,
        mlm: false,
    };
    let squad = StrategyId {
        base: BaseStrategy::Squad,
        mlm: false,
    };
    let budget_cols = || budgets.iter().map(|k| k.to_string()).collect::<Vec<_>>();
    Ok(match kind {
        ReportKind::Grid => {
            let mut r = ReportTable::new(kind, "Macro-F1 (%) by strategy and budget, fold-averaged", &["dataset", "strategy"], budget_cols());
            for d in datasets {
                for s in t.strategies() {
                    r.push(&[d, &s.name()], budgets.iter().map(|&k| t.at(d, s, k)).collect());
                }
            }
            r
        }
        ReportKind::BestVsBaseline => {
            require(t, baseline)?;
            let mut cols = budget_cols();
            cols.push("avg".into());
            let mut r = ReportTable::new(
                kind,
                "Baseline vs best strategy, averaged over datasets",
                &["comparison", "row"],
                cols,
            );
            let base: Vec<f64> = budgets.iter().map(|&k| mean(datasets.iter().map(|d| t.at(d, baseline, k)))).collect();
            let best: Vec<f64> = budgets.iter().map(|&k| mean(datasets.iter().map(|d| t.best(d, k).1))).collect();
            let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
            let (base, best) = (with_avg(base), with_avg(best));
            r.push(&["best_per_budget", "baseline"], base.clone());
            r.push(&["best_per_budget", "best"], best.clone());
            r.push(&["best_per_budget", "difference"], diff(&best, &base));

            let mut top: Option<(StrategyId, f64)> = None;
            for s in t.strategies() {
                let avg = mean(datasets.iter().flat_map(|d| budgets.iter().map(move |&k| (d, k))).map(|(d, k)| t.at(d, s, k)));
                if top.is_none_or(|(_, b)| avg > b) {
                    top = Some((s, avg));
                }
            }
            let (s, _) = top.expect("strategies present");
            let avg_row = with_avg(budgets.iter().map(|&k| mean(datasets.iter().map(|d| t.at(d, s, k)))).collect());
            r.push(&["best_on_average", "baseline"], base.clone());
            r.push(&["best_on_average", &s.name()], avg_row.clone());
            r.push(&["best_on_average", "difference"], diff(&avg_row, &base));
            r
        }
        ReportKind::MlmDelta => {
            let mut r = ReportTable::new(
                kind,
                "Mean macro-F1 (%) without and with the MLM stage, over all budgets and strategies",
                &["row"],
                datasets.to_vec(),
            );
            let (plain, mlm): (Vec<StrategyId>, Vec<StrategyId>) = t.strategies().into_iter().partition(|s| !s.mlm);
            if plain.is_empty() || mlm.is_empty() {
                return Err(ReportError::Coverage(vec!["strategies with and without MLM".into()]));
            }
            let avg = |set: &[StrategyId], d: &str| mean(set.iter().flat_map(|&s| budgets.iter().map(move |&k| t.at(d, s, k))));
            let no: Vec<f64> = datasets.iter().map(|d| avg(&plain, d)).collect();
            let with: Vec<f64> = datasets.iter().map(|d| avg(&mlm, d)).collect();
            let diff = with.iter().zip(&no).map(|(w, n)| w - n).collect();
            r.push(&["no_mlm"], no);
            r.push(&["with_mlm"], with);
            r.push(&["difference"], diff);
            r
        }
        ReportKind::ZeroShotGap => {
            require(t, squad)?;
            let (lo, hi) = (budgets[0], budgets[budgets.len() - 1]);
            let mut r = ReportTable::new(
                kind,
                &format!("General-only model vs best strategy at K={lo} and K={hi}"),
                &["row"],
                datasets.to_vec(),
            );
            let zero: Vec<f64> = datasets.iter().map(|d| t.at(d, squad, lo)).collect();
            let low: Vec<f64> = datasets.iter().map(|d| t.best(d, lo).1).collect();
            let high: Vec<f64> = datasets.iter().map(|d| t.best(d, hi).1).collect();
            let gap = |v: &[f64]| v.iter().zip(&zero).map(|(a, z)| a - z).collect::<Vec<_>>();
            r.push(&["zero_shot"], zero.clone());
            r.push(&["low_budget"], low.clone());
            r.push(&["low_difference"], gap(&low));
            r.push(&["high_budget"], high.clone());
            r.push(&["high_difference"], gap(&high));
            r
        }
        ReportKind::BudgetDoubling => {
            let mut cols: Vec<String> = budgets.windows(2).map(|w| format!("{}->{}", w[0], w[1])).collect();
            let (lo, hi) = (budgets[0], budgets[budgets.len() - 1]);
            if budgets.len() > 1 {
                cols.push(format!("{lo}->{hi}"));
            }
            let mut r = ReportTable::new(
                kind,
                "Relative gain (%) of the best strategy between budgets",
                &["dataset"],
                cols,
            );
            let rel = |a: f64, b: f64| 100.0 * (b - a) / a;
            for d in datasets {
                let best: Vec<f64> = budgets.iter().map(|&k| t.best(d, k).1).collect();
                let mut v: Vec<f64> = best.windows(2).map(|w| rel(w[0], w[1])).collect();
                if budgets.len() > 1 {
                    v.push(rel(best[0], best[best.len() - 1]));
                }
                r.push(&[d], v);
            }
            r
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::CellStatus;

    fn sid(s: &str) -> StrategyId {
        s.parse().unwrap()
    }

    fn small() -> ScoreTable {
        let mut t = ScoreTable::default();
        for (s, vals) in [
            ("SQuAD", [50.0, 50.0]),
            ("SQuAD-TargetQA", [60.0, 70.0]),
            ("MW", [65.0, 68.0]),
            ("MLM-MW", [64.0, 69.0]),
        ] {
            for (k, v) in [100, 200].iter().zip(vals) {
                t.insert("d", sid(s), *k, v);
            }
        }
        t
    }

    #[test]
    fn best_vs_baseline_small() {
        let r = report(&small(), ReportKind::BestVsBaseline).unwrap();
        assert_eq!(r.value(&["best_per_budget", "best"], "100"), Some(65.0));
        assert_eq!(r.value(&["best_per_budget", "best"], "200"), Some(70.0));
        assert_eq!(r.value(&["best_per_budget", "difference"], "avg"), Some(2.5));
        // MW and MLM-MW both average 66.5 over budgets; canonical order picks MW
        assert_eq!(r.value(&["best_on_average", "MW"], "100"), Some(65.0));
        assert_eq!(r.value(&["best_on_average", "difference"], "200"), Some(-2.0));
    }

    #[test]
    fn other_kinds_small() {
        let t = small();
        let z = report(&t, ReportKind::ZeroShotGap).unwrap();
        assert_eq!(z.value(&["high_difference"], "d"), Some(20.0));
        let m = report(&t, ReportKind::MlmDelta).unwrap();
        assert_eq!(m.value(&["no_mlm"], "d"), Some((50.0 * 2.0 + 130.0 + 133.0) / 6.0));
        assert_eq!(m.value(&["with_mlm"], "d"), Some(66.5));
        let b = report(&t, ReportKind::BudgetDoubling).unwrap();
        assert!((b.value(&["d"], "100->200").unwrap() - 100.0 * 5.0 / 65.0).abs() < 1e-12);
    }

    #[test]
    fn missing_cells_are_coverage_errors() {
        let mut t = small();
        t.insert("e", sid("MW"), 100, 1.0);
        assert!(matches!(report(&t, ReportKind::Grid), Err(ReportError::Coverage(m)) if m.len() == 7));
        let mut t = ScoreTable::default();
        t.insert("d", sid("MW"), 100, 1.0);
        assert!(matches!(report(&t, ReportKind::BestVsBaseline), Err(ReportError::Coverage(_))));
        assert!(matches!(report(&t, ReportKind::MlmDelta), Err(ReportError::Coverage(_))));
        assert_eq!(report(&ScoreTable::default(), ReportKind::Grid), Err(ReportError::Empty));
    }

    #[test]
    fn scores_average_folds_and_ignore_failures() {
        let cell = |fold, f1, status| CellResult {
            dataset: "d".into(),
            strategy: "MW".into(),
            budget_k: 100,
            fold,
            seed: 0,
            macro_f1_pct: f1,
            em_pct: 0.0,
            wall_time_s: 0.0,
            status,
            error: None,
        };
        let t = ScoreTable::from_cells(&[cell(0, 40.0, CellStatus::Ok), cell(1, 60.0, CellStatus::Ok), cell(2, 0.0, CellStatus::Failed)])
            .unwrap();
        assert_eq!(t.get("d", sid("MW"), 100), Some(50.0));
    }

    #[test]
    fn renderings() {
        let r = report(&small(), ReportKind::Grid).unwrap();
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().next(), Some("dataset\tstrategy\t100\t200"));
        assert!(tsv.contains("d\tMLM-MW\t64.0000\t69.0000"));
        let md = r.render(ReportFormat::Markdown);
        assert!(md.contains("| d | SQuAD | 50.00 | 50.00 |"));
        let back: ReportTable = serde_json::from_str(&r.render(ReportFormat::Json)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let t = ScoreTable::from_tsv("dataset\tstrategy\t100\nd\tMW\t1.5\n").unwrap();
        assert_eq!(t.get("d", sid("MW"), 100), Some(1.5));
        assert!(matches!(ScoreTable::from_tsv("dataset\tstrategy\tx\n"), Err(ReportError::Parse { line: 1, .. })));
        assert!(matches!(
            ScoreTable::from_tsv("dataset\tstrategy\t100\nd\tMW\n"),
            Err(ReportError::Parse { line: 2, .. })
        ));
        assert!("nope".parse::<ReportKind>().is_err());
        assert_eq!("mlm_delta".parse::<ReportKind>(), Ok(ReportKind::MlmDelta));
    }
}
