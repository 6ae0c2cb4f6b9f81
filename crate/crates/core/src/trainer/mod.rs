//! Training backends.
//!
//! A backend owns model state and hands out opaque [`ModelHandle`]s. Stages
//! consume a handle and return a new one whose lineage records the stage.
//! Two implementations ship here: [`builtin::BuiltinBackend`], a deterministic
//! linear span scorer, and [`process::ProcessBackend`], which drives an
//! external trainer over newline-delimited JSON on its stdin/stdout.

pub mod builtin;
pub mod process;
pub mod protocol;
pub mod scorer;
pub mod server;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{QaDataset, TextCorpus};

pub use builtin::{BuiltinBackend, CallLog};
pub use process::ProcessBackend;
pub use scorer::{SpanScorerModel, TokenSpan, TrainReport};

pub const LINEAGE_MLM: &str = "MLM";
pub const LINEAGE_QA: &str = "QA";

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("backend {backend} does not support {capability}")]
    Unsupported { backend: String, capability: Capability },
    #[error("training data is empty")]
    EmptyData,
    #[error("unknown model handle {0:?}")]
    UnknownHandle(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("span {start}..{end} is outside a context of {len} tokens")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("backend transport failed: {message}{}", fmt_diagnostics(.diagnostics))]
    Transport { message: String, diagnostics: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend error ({kind}): {message}")]
    Remote { kind: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_diagnostics(d: &str) -> String {
    if d.trim().is_empty() {
        String::new()
    } else {
        format!("; backend stderr: {}", d.trim())
    }
}

impl TrainerError {
    /// Capability gaps mark a cell as skipped rather than failed.
    pub fn is_unsupported(&self) -> bool {
        matches!(self, TrainerError::Unsupported { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Mlm,
    Qa,
    Predict,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Mlm => "mlm",
            Capability::Qa => "qa",
            Capability::Predict => "predict",
        }
    }
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelHandle {
    pub handle_id: String,
    pub backend_id: String,
    /// Completed stages, oldest first.
    pub lineage: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_context_tokens: usize,
}

impl TrainConfig {
    /// Defaults for the built-in span scorer.
    pub fn builtin_default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            max_context_tokens: 512,
        }
    }

    /// Defaults for transformer backends: decoupled weight decay optimizer at 3e-5.
    pub fn external_default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            epochs: 2,
            batch_size: 16,
            seed: 0,
            max_context_tokens: 384,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainerError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainerError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_context_tokens == 0 {
            return Err(TrainerError::InvalidConfig("max_context_tokens must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::builtin_default()
    }
}

/// One question to answer at prediction time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictItem {
    pub id: String,
    pub question: String,
    pub context: String,
}

impl PredictItem {
    pub fn from_dataset(d: &QaDataset) -> Vec<PredictItem> {
        d.iter_examples()
            .map(|e| PredictItem {
                id: e.id.to_string(),
                question: e.question.to_string(),
                context: e.context.to_string(),
            })
            .collect()
    }
}

/// A stateful trainer. One backend serves one training cell at a time.
pub trait Backend: Send {
    fn backend_id(&self) -> &str;

    fn capabilities(&self) -> &[Capability];

    fn supports(&self, c: Capability) -> bool {
        self.capabilities().contains(&c)
    }

    /// The untouched pretrained model.
    fn base_model(&mut self) -> Result<ModelHandle, TrainerError>;

    /// Domain adaptation on raw text.
    fn train_mlm(&mut self, h: &ModelHandle, corpus: &TextCorpus, cfg: &TrainConfig)
        -> Result<ModelHandle, TrainerError>;

    /// Span-extraction training over `data`, duplicates included.
    fn train_qa(&mut self, h: &ModelHandle, data: &QaDataset, cfg: &TrainConfig) -> Result<ModelHandle, TrainerError>;

    /// Persists the model behind `h` to the directory `dir`.
    fn save(&mut self, h: &ModelHandle, dir: &Path) -> Result<(), TrainerError>;

    fn load(&mut self, dir: &Path) -> Result<ModelHandle, TrainerError>;

    /// Exactly one answer per item, each a substring of its context.
    fn predict(&mut self, h: &ModelHandle, items: &[PredictItem]) -> Result<Vec<(String, String)>, TrainerError>;
}

/// Creates one backend per worker.
pub trait BackendFactory: Sync {
    fn backend_id(&self) -> String;

    fn create(&self) -> Result<Box<dyn Backend>, TrainerError>;
}

#[derive(Default)]
pub struct BuiltinFactory {
    /// Advertised capabilities; all of them when `None`.
    pub capabilities: Option<Vec<Capability>>,
    pub call_log: Option<CallLog>,
}

impl BackendFactory for BuiltinFactory {
    fn backend_id(&self) -> String {
        builtin::BUILTIN_ID.to_string()
    }

    fn create(&self) -> Result<Box<dyn Backend>, TrainerError> {
        let mut b = BuiltinBackend::new();
        if let Some(caps) = &self.capabilities {
            b = b.with_capabilities(caps);
        }
        if let Some(log) = &self.call_log {
            b = b.with_call_log(log.clone());
        }
        Ok(Box::new(b))
    }
}

/// Launches `command` (program followed by arguments) once per worker.
pub struct ProcessFactory {
    pub command: Vec<String>,
}

impl BackendFactory for ProcessFactory {
    fn backend_id(&self) -> String {
        format!("process:{}", self.command.join(" "))
    }

    fn create(&self) -> Result<Box<dyn Backend>, TrainerError> {
        Ok(Box::new(ProcessBackend::spawn(&self.command)?))
    }
}
