//! Merge operators over target and general QA data, and the eighteen
//! fine-tuning pipelines built from them.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{QaDataset, TextCorpus};
use crate::sampling::{
    derive_seed, partial_shuffle, rng_from_seed, sample_budget, sample_uniform_iid, BudgetSpec,
    Replacement, SamplingError,
};

/// Copies of the target set placed in MPO/MWO merges.
pub const DEFAULT_OVERSAMPLE: usize = 3;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("unknown strategy {name:?}; valid names: {}", valid.join(", "))]
    Unknown { name: String, valid: Vec<String> },
    #[error("cannot size merge {kind}: {source}")]
    Sizing {
        kind: MergeKind,
        #[source]
        source: SamplingError,
    },
    #[error("budget sampling failed: {0}")]
    Budget(#[source] SamplingError),
    #[error("stage {0} is not a QA stage")]
    NotQaStage(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MergeKind {
    #[serde(rename = "TargetQA")]
    TargetQa,
    #[serde(rename = "MP")]
    Mp,
    #[serde(rename = "MPO")]
    Mpo,
    #[serde(rename = "MW")]
    Mw,
    #[serde(rename = "MWO")]
    Mwo,
}

impl MergeKind {
    pub const ALL: [MergeKind; 5] = [
        MergeKind::TargetQa,
        MergeKind::Mp,
        MergeKind::Mpo,
        MergeKind::Mw,
        MergeKind::Mwo,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MergeKind::TargetQa => "TargetQA",
            MergeKind::Mp => "MP",
            MergeKind::Mpo => "MPO",
            MergeKind::Mw => "MW",
            MergeKind::Mwo => "MWO",
        }
    }

    pub fn oversamples(self) -> bool {
        matches!(self, MergeKind::Mpo | MergeKind::Mwo)
    }

    /// Expected merged size for the given target/general sizes and factor.
    pub fn merged_len(self, target: usize, general: usize, factor: usize) -> usize {
        match self {
            MergeKind::TargetQa => target,
            MergeKind::Mp => 2 * target,
            MergeKind::Mpo => factor * target + target,
            MergeKind::Mw => target + general,
            MergeKind::Mwo => factor * target + general,
        }
    }
}

impl fmt::Display for MergeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MergeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MergeKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown merge kind {s:?} (expected TargetQA, MP, MPO, MW or MWO)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStrategy {
    pub kind: MergeKind,
    pub oversample_factor: usize,
    pub seed: u64,
    pub replacement: Replacement,
}

impl MergeStrategy {
    pub fn new(kind: MergeKind, seed: u64) -> Self {
        MergeStrategy {
            kind,
            oversample_factor: if kind.oversamples() { DEFAULT_OVERSAMPLE } else { 1 },
            seed,
            replacement: Replacement::Without,
        }
    }

    /// Overrides the factor for oversampling kinds; other kinds stay at 1.
    pub fn with_oversample_factor(mut self, factor: usize) -> Self {
        if self.kind.oversamples() {
            self.oversample_factor = factor;
        }
        self
    }

    pub fn with_replacement(mut self, replacement: Replacement) -> Self {
        self.replacement = replacement;
        self
    }
}

/// Builds the final training multiset from target data `d_t` and general data `d_g`.
///
/// TargetQA returns `d_t` unchanged. Every other kind returns a seeded shuffle
/// of the merged multiset; repeated target examples are genuine repeats.
pub fn build_merge(d_t: &QaDataset, d_g: &QaDataset, s: &MergeStrategy) -> Result<QaDataset, StrategyError> {
    if s.kind == MergeKind::TargetQa {
        return Ok(d_t.clone());
    }
    let copies = if s.kind.oversamples() { s.oversample_factor } else { 1 };
    let target = d_t.flatten();
    let mut merged = Vec::with_capacity(s.kind.merged_len(target.len(), d_g.len(), copies));
    for _ in 0..copies {
        merged.extend(target.iter().cloned());
    }
    match s.kind {
        MergeKind::Mp | MergeKind::Mpo => {
            let sample = sample_uniform_iid(d_g, target.len(), derive_seed(s.seed, &["general-sample"]), s.replacement)
                .map_err(|source| StrategyError::Sizing { kind: s.kind, source })?;
            merged.extend(sample.flatten());
        }
        MergeKind::Mw | MergeKind::Mwo => merged.extend(d_g.flatten()),
        MergeKind::TargetQa => unreachable!(),
    }
    let n = merged.len();
    partial_shuffle(&mut merged, n, &mut rng_from_seed(derive_seed(s.seed, &["shuffle"])));
    Ok(QaDataset::from_examples(
        format!("{}+{}:{}", d_t.name, d_g.name, s.kind),
        merged,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageKind {
    #[serde(rename = "MLM")]
    Mlm,
    #[serde(rename = "QA")]
    QaFinetune,
}

/// What a QA stage trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaRecipe {
    /// The full general dataset.
    General,
    /// A merge of the budgeted target sample with the general dataset.
    Merge(MergeKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRef {
    DomainCorpus,
    Qa(QaRecipe),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_kind: StageKind,
    pub data_ref: DataRef,
    /// Stage-level settings. `data_scale` is `corpus`, `general` or `target`
    /// and selects the epoch default for the stage.
    pub hyperparams: BTreeMap<String, Value>,
}

impl StageSpec {
    fn mlm() -> Self {
        StageSpec {
            stage_kind: StageKind::Mlm,
            data_ref: DataRef::DomainCorpus,
            hyperparams: BTreeMap::from([("data_scale".to_string(), Value::from("corpus"))]),
        }
    }

    fn qa(recipe: QaRecipe) -> Self {
        let scale = match recipe {
            QaRecipe::General | QaRecipe::Merge(MergeKind::Mw | MergeKind::Mwo) => "general",
            QaRecipe::Merge(_) => "target",
        };
        StageSpec {
            stage_kind: StageKind::QaFinetune,
            data_ref: DataRef::Qa(recipe),
            hyperparams: BTreeMap::from([("data_scale".to_string(), Value::from(scale))]),
        }
    }

    pub fn data_scale(&self) -> &str {
        self.hyperparams
            .get("data_scale")
            .and_then(Value::as_str)
            .unwrap_or("target")
    }

    pub fn label(&self) -> String {
        match self.data_ref {
            DataRef::DomainCorpus => "MLM".to_string(),
            DataRef::Qa(QaRecipe::General) => "SQuAD".to_string(),
            DataRef::Qa(QaRecipe::Merge(k)) => k.label().to_string(),
        }
    }
}

/// The nine stage combinations, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseStrategy {
    Squad,
    TargetQa,
    SquadTargetQa,
    Mp,
    Mpo,
    SquadMp,
    SquadMpo,
    Mw,
    Mwo,
}

impl BaseStrategy {
    pub const ALL: [BaseStrategy; 9] = [
        BaseStrategy::Squad,
        BaseStrategy::TargetQa,
        BaseStrategy::SquadTargetQa,
        BaseStrategy::Mp,
        BaseStrategy::Mpo,
        BaseStrategy::SquadMp,
        BaseStrategy::SquadMpo,
        BaseStrategy::Mw,
        BaseStrategy::Mwo,
    ];

    pub fn recipes(self) -> Vec<QaRecipe> {
        use QaRecipe::{General, Merge};
        match self {
            BaseStrategy::Squad => vec![General],
            BaseStrategy::TargetQa => vec![Merge(MergeKind::TargetQa)],
            BaseStrategy::SquadTargetQa => vec![General, Merge(MergeKind::TargetQa)],
            BaseStrategy::Mp => vec![Merge(MergeKind::Mp)],
            BaseStrategy::Mpo => vec![Merge(MergeKind::Mpo)],
            BaseStrategy::SquadMp => vec![General, Merge(MergeKind::Mp)],
            BaseStrategy::SquadMpo => vec![General, Merge(MergeKind::Mpo)],
            BaseStrategy::Mw => vec![Merge(MergeKind::Mw)],
            BaseStrategy::Mwo => vec![Merge(MergeKind::Mwo)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseStrategy::Squad => "SQuAD",
            BaseStrategy::TargetQa => "TargetQA",
            BaseStrategy::SquadTargetQa => "SQuAD-TargetQA",
            BaseStrategy::Mp => "MP",
            BaseStrategy::Mpo => "MPO",
            BaseStrategy::SquadMp => "SQuAD-MP",
            BaseStrategy::SquadMpo => "SQuAD-MPO",
            BaseStrategy::Mw => "MW",
            BaseStrategy::Mwo => "MWO",
        }
    }
}

/// One of the eighteen strategies: a base combination, optionally preceded
/// by a domain-adaptation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyId {
    pub base: BaseStrategy,
    pub mlm: bool,
}

impl StrategyId {
    /// All eighteen in canonical order: each base followed by its MLM variant.
    pub fn all() -> Vec<StrategyId> {
        BaseStrategy::ALL
            .into_iter()
            .flat_map(|base| [StrategyId { base, mlm: false }, StrategyId { base, mlm: true }])
            .collect()
    }

    pub fn name(self) -> String {
        if self.mlm {
            format!("MLM-{}", self.base.name())
        } else {
            self.base.name().to_string()
        }
    }

    /// Position in canonical order, used to break ties in reports.
    pub fn rank(self) -> usize {
        self.base as usize * 2 + usize::from(self.mlm)
    }

    /// The sequential PLM -> SQuAD -> TargetQA pipeline.
    pub fn is_baseline(self) -> bool {
        self.base == BaseStrategy::SquadTargetQa && !self.mlm
    }

    /// Pipelines that never see target annotations give the same model at every budget.
    pub fn budget_invariant(self) -> bool {
        self.base == BaseStrategy::Squad
    }

    pub fn pipeline(self) -> StrategyPipeline {
        let mut stages = Vec::new();
        if self.mlm {
            stages.push(StageSpec::mlm());
        }
        stages.extend(self.base.recipes().into_iter().map(StageSpec::qa));
        StrategyPipeline {
            name: self.name(),
            stages,
            uses_mlm: self.mlm,
            baseline: self.is_baseline(),
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for StrategyId {
    type Err = StrategyError;

    fn from_str(name: &str) -> Result<Self, Self::Err> {
        StrategyId::all()
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| StrategyError::Unknown {
                name: name.to_string(),
                valid: StrategyId::all().into_iter().map(StrategyId::name).collect(),
            })
    }
}

impl Serialize for StrategyId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyPipeline {
    pub name: String,
    pub stages: Vec<StageSpec>,
    pub uses_mlm: bool,
    pub baseline: bool,
}

pub fn enumerate_strategies() -> Vec<StrategyPipeline> {
    StrategyId::all().into_iter().map(StrategyId::pipeline).collect()
}

/// How merge stages are sized beyond their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOptions {
    pub oversample_factor: usize,
    pub replacement: Replacement,
}

impl Default for MergeOptions {
    fn default() -> Self {
        MergeOptions {
            oversample_factor: DEFAULT_OVERSAMPLE,
            replacement: Replacement::Without,
        }
    }
}

/// A strategy bound to concrete data: the domain corpus, the general set, and
/// the budgeted target sample.
#[derive(Debug)]
pub struct BoundPipeline<'a> {
    pub strategy: StrategyId,
    pub pipeline: StrategyPipeline,
    pub general: &'a QaDataset,
    pub corpus: &'a TextCorpus,
    /// Sampled target data; `None` for budget-invariant strategies.
    pub target: Option<QaDataset>,
    pub budget: Option<BudgetSpec>,
    pub merge_options: MergeOptions,
}

/// Binds `name` to data. `target_pool` is the fold's training partition; the
/// budgeted sample is drawn from it with `budget`. Budget-invariant strategies
/// ignore the budget entirely.
pub fn stages_for<'a>(
    name: &str,
    target_pool: &QaDataset,
    general: &'a QaDataset,
    corpus: &'a TextCorpus,
    budget: &BudgetSpec,
) -> Result<BoundPipeline<'a>, StrategyError> {
    stages_for_with(name, target_pool, general, corpus, budget, MergeOptions::default())
}

pub fn stages_for_with<'a>(
    name: &str,
    target_pool: &QaDataset,
    general: &'a QaDataset,
    corpus: &'a TextCorpus,
    budget: &BudgetSpec,
    merge_options: MergeOptions,
) -> Result<BoundPipeline<'a>, StrategyError> {
    let strategy: StrategyId = name.parse()?;
    let (target, budget) = if strategy.budget_invariant() {
        (None, None)
    } else {
        let ids = sample_budget(&target_pool.ids(), budget).map_err(StrategyError::Budget)?;
        let sample = target_pool
            .select(format!("{}@{}", target_pool.name, budget.k), &ids)
            .expect("sampled ids come from the pool");
        (Some(sample), Some(*budget))
    };
    Ok(BoundPipeline {
        strategy,
        pipeline: strategy.pipeline(),
        general,
        corpus,
        target,
        budget,
        merge_options,
    })
}

impl BoundPipeline<'_> {
    pub fn stages(&self) -> &[StageSpec] {
        &self.pipeline.stages
    }

    pub fn merge_strategy(&self, kind: MergeKind, seed: u64) -> MergeStrategy {
        MergeStrategy::new(kind, seed)
            .with_oversample_factor(self.merge_options.oversample_factor)
            .with_replacement(self.merge_options.replacement)
    }

    /// Identifier of stage `i` alone; equal keys mean equal training inputs.
    pub fn stage_key(&self, i: usize) -> String {
        let stage = &self.pipeline.stages[i];
        match stage.data_ref {
            DataRef::DomainCorpus => format!(
                "MLM(corpus={};docs={};bytes={})",
                self.corpus.documents.first().map_or("", |d| d.doc_id.as_str()),
                self.corpus.documents.len(),
                self.corpus.size_bytes
            ),
            DataRef::Qa(QaRecipe::General) => format!("QA(general={};n={})", self.general.name, self.general.len()),
            DataRef::Qa(QaRecipe::Merge(kind)) => {
                let budget = self.budget.expect("merge stages carry a budget");
                let mut key = format!("QA({kind};target={};k={};seed={}", self.target_name(), budget.k, budget.seed);
                if kind != MergeKind::TargetQa {
                    key.push_str(&format!(";general={}", self.general.name));
                }
                if kind.oversamples() {
                    key.push_str(&format!(";x{}", self.merge_options.oversample_factor));
                }
                if matches!(kind, MergeKind::Mp | MergeKind::Mpo) {
                    key.push_str(&format!(";{:?}", self.merge_options.replacement));
                }
                key.push(')');
                key
            }
        }
    }

    /// Keys of stages `0..=i` joined; identifies the model after stage `i`.
    pub fn prefix_key(&self, i: usize) -> String {
        (0..=i).map(|j| self.stage_key(j)).collect::<Vec<_>>().join(" > ")
    }

    fn target_name(&self) -> &str {
        self.target.as_ref().map_or("", |t| t.name.as_str())
    }

    /// Training data of QA stage `i`, merging with `seed` where needed.
    pub fn qa_data(&self, i: usize, seed: u64) -> Result<Cow<'_, QaDataset>, StrategyError> {
        match self.pipeline.stages[i].data_ref {
            DataRef::DomainCorpus => Err(StrategyError::NotQaStage(i)),
            DataRef::Qa(QaRecipe::General) => Ok(Cow::Borrowed(self.general)),
            DataRef::Qa(QaRecipe::Merge(MergeKind::TargetQa)) => {
                Ok(Cow::Borrowed(self.target.as_ref().expect("target stages carry a sample")))
            }
            DataRef::Qa(QaRecipe::Merge(kind)) => {
                let target = self.target.as_ref().expect("target stages carry a sample");
                build_merge(target, self.general, &self.merge_strategy(kind, seed)).map(Cow::Owned)
            }
        }
    }
}
