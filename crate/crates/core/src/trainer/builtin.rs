//! In-process backend around [`SpanScorerModel`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::scorer::SpanScorerModel;
use super::{Backend, Capability, ModelHandle, PredictItem, TrainConfig, TrainerError, LINEAGE_MLM, LINEAGE_QA};
use crate::dataset::{QaDataset, TextCorpus};

pub const BUILTIN_ID: &str = "builtin-span-scorer";
pub const MODEL_FILE: &str = "model.json";

const ALL_CAPABILITIES: [Capability; 3] = [Capability::Mlm, Capability::Qa, Capability::Predict];

/// Shared record of training calls, one line per call: `op data lineage`.
pub type CallLog = Arc<Mutex<Vec<String>>>;

#[derive(Debug, Serialize, Deserialize)]
struct SavedModel {
    backend_id: String,
    lineage: Vec<String>,
    model: SpanScorerModel,
}

pub struct BuiltinBackend {
    capabilities: Vec<Capability>,
    models: HashMap<String, (SpanScorerModel, Vec<String>)>,
    next_id: usize,
    call_log: Option<CallLog>,
}

impl Default for BuiltinBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl BuiltinBackend {
    pub fn new() -> Self {
        BuiltinBackend {
            capabilities: ALL_CAPABILITIES.to_vec(),
            models: HashMap::new(),
            next_id: 0,
            call_log: None,
        }
    }

    /// Restricts the advertised capabilities, e.g. to emulate a QA-only backend.
    pub fn with_capabilities(mut self, caps: &[Capability]) -> Self {
        self.capabilities = caps.to_vec();
        self
    }

    pub fn with_call_log(mut self, log: CallLog) -> Self {
        self.call_log = Some(log);
        self
    }

    pub fn model(&self, h: &ModelHandle) -> Result<&SpanScorerModel, TrainerError> {
        self.entry(h).map(|(m, _)| m)
    }

    fn entry(&self, h: &ModelHandle) -> Result<&(SpanScorerModel, Vec<String>), TrainerError> {
        self.models
            .get(&h.handle_id)
            .ok_or_else(|| TrainerError::UnknownHandle(h.handle_id.clone()))
    }

    fn insert(&mut self, model: SpanScorerModel, lineage: Vec<String>) -> ModelHandle {
        let handle_id = format!("m{}", self.next_id);
        self.next_id += 1;
        self.models.insert(handle_id.clone(), (model, lineage.clone()));
        ModelHandle {
            handle_id,
            backend_id: BUILTIN_ID.to_string(),
            lineage,
        }
    }

    fn require(&self, c: Capability) -> Result<(), TrainerError> {
        if self.supports(c) {
            Ok(())
        } else {
            Err(TrainerError::Unsupported {
                backend: BUILTIN_ID.to_string(),
                capability: c,
            })
        }
    }

    fn log(&self, op: &str, data: &str, lineage: &[String]) {
        if let Some(log) = &self.call_log {
            log.lock()
                .expect("call log poisoned")
                .push(format!("{op} {data} [{}]", lineage.join(",")));
        }
    }
}

impl Backend for BuiltinBackend {
    fn backend_id(&self) -> &str {
        BUILTIN_ID
    }

    fn capabilities(&self) -> &[Capability] {
        &self.capabilities
    }

    fn base_model(&mut self) -> Result<ModelHandle, TrainerError> {
        Ok(self.insert(SpanScorerModel::untrained(), Vec::new()))
    }

    fn train_mlm(&mut self, h: &ModelHandle, corpus: &TextCorpus, cfg: &TrainConfig) -> Result<ModelHandle, TrainerError> {
        self.require(Capability::Mlm)?;
        cfg.validate()?;
        let (model, lineage) = self.entry(h)?;
        if corpus.is_empty() {
            return Err(TrainerError::EmptyData);
        }
        let mut model = model.clone();
        let mut lineage = lineage.clone();
        self.log("train_mlm", corpus.documents[0].doc_id.split('#').next().unwrap_or(""), &lineage);
        model.fit_idf(corpus);
        lineage.push(LINEAGE_MLM.to_string());
        Ok(self.insert(model, lineage))
    }

    fn train_qa(&mut self, h: &ModelHandle, data: &QaDataset, cfg: &TrainConfig) -> Result<ModelHandle, TrainerError> {
        self.require(Capability::Qa)?;
        let (model, lineage) = self.entry(h)?;
        let mut model = model.clone();
        let mut lineage = lineage.clone();
        self.log("train_qa", &data.name, &lineage);
        model.fit_qa(data, cfg)?;
        lineage.push(LINEAGE_QA.to_string());
        Ok(self.insert(model, lineage))
    }

    /// Writes the model behind `h` to `dir/model.json`.
    fn save(&mut self, h: &ModelHandle, dir: &Path) -> Result<(), TrainerError> {
        let (model, lineage) = self.entry(h)?;
        fs::create_dir_all(dir)?;
        let saved = SavedModel {
            backend_id: BUILTIN_ID.to_string(),
            lineage: lineage.clone(),
            model: model.clone(),
        };
        let json = serde_json::to_vec_pretty(&saved).map_err(|e| TrainerError::Protocol(e.to_string()))?;
        fs::write(dir.join(MODEL_FILE), json)?;
        Ok(())
    }

    fn load(&mut self, dir: &Path) -> Result<ModelHandle, TrainerError> {
        let raw = fs::read(dir.join(MODEL_FILE))?;
        let saved: SavedModel = serde_json::from_slice(&raw)
            .map_err(|e| TrainerError::Protocol(format!("{}: {e}", dir.join(MODEL_FILE).display())))?;
        if saved.model.weights.len() != saved.model.feature_names.len() {
            return Err(TrainerError::Protocol("saved weights do not match feature names".into()));
        }
        Ok(self.insert(saved.model, saved.lineage))
    }

    fn predict(&mut self, h: &ModelHandle, items: &[PredictItem]) -> Result<Vec<(String, String)>, TrainerError> {
        self.require(Capability::Predict)?;
        let model = self.model(h)?;
        let max_tokens = TrainConfig::builtin_default().max_context_tokens;
        Ok(items
            .iter()
            .map(|it| {
                let answer = model.predict_answer(&it.question, &it.context, max_tokens);
                (it.id.clone(), answer.to_string())
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Answer, Document, Example};

    fn tiny() -> QaDataset {
        let context = "the drug ribavirin reduced mortality. nurses wore masks.".to_string();
        QaDataset::from_examples(
            "tiny",
            [Example {
                id: "q1".into(),
                question: "which drug reduced mortality".into(),
                answers: vec![Answer {
                    text: "ribavirin".into(),
                    answer_start: 9,
                }],
                context,
            }],
        )
    }

    fn corpus() -> TextCorpus {
        TextCorpus::new(vec![Document {
            doc_id: "tiny#0".into(),
            text: "ribavirin reduced mortality".into(),
        }])
    }

    #[test]
    fn lineage_records_stages_in_order() {
        let mut b = BuiltinBackend::new();
        let cfg = TrainConfig::builtin_default().with_epochs(2);
        let base = b.base_model().unwrap();
        assert!(base.lineage.is_empty());
        let m = b.train_mlm(&base, &corpus(), &cfg).unwrap();
        let q = b.train_qa(&m, &tiny(), &cfg).unwrap();
        assert_eq!(q.lineage, ["MLM", "QA"]);
        assert_eq!(b.train_qa(&base, &tiny(), &cfg).unwrap().lineage, ["QA"]);
        assert_ne!(q.handle_id, m.handle_id);
    }

    #[test]
    fn unknown_handles_and_missing_capabilities() {
        let mut b = BuiltinBackend::new().with_capabilities(&[Capability::Qa, Capability::Predict]);
        let base = b.base_model().unwrap();
        let err = b.train_mlm(&base, &corpus(), &TrainConfig::default()).unwrap_err();
        assert!(err.is_unsupported());
        let ghost = ModelHandle {
            handle_id: "nope".into(),
            ..base
        };
        assert!(matches!(b.predict(&ghost, &[]), Err(TrainerError::UnknownHandle(_))));
    }

    #[test]
    fn empty_data_is_rejected() {
        let mut b = BuiltinBackend::new();
        let base = b.base_model().unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(b.train_qa(&base, &QaDataset::empty("e"), &cfg), Err(TrainerError::EmptyData)));
        assert!(matches!(
            b.train_mlm(&base, &TextCorpus::new(vec![]), &cfg),
            Err(TrainerError::EmptyData)
        ));
    }

    #[test]
    fn predictions_are_context_substrings() {
        let mut b = BuiltinBackend::new();
        let base = b.base_model().unwrap();
        let h = b.train_qa(&base, &tiny(), &TrainConfig::default()).unwrap();
        let items = PredictItem::from_dataset(&tiny());
        let preds = b.predict(&h, &items).unwrap();
        assert_eq!(preds.len(), 1);
        assert!(items[0].context.contains(&preds[0].1));
        assert_eq!(preds[0].0, "q1");
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = BuiltinBackend::new();
        let base = b.base_model().unwrap();
        let h = b.train_qa(&base, &tiny(), &TrainConfig::default()).unwrap();
        b.save(&h, dir.path()).unwrap();
        let mut other = BuiltinBackend::new();
        let loaded = other.load(dir.path()).unwrap();
        assert_eq!(loaded.lineage, ["QA"]);
        assert_eq!(other.model(&loaded).unwrap(), b.model(&h).unwrap());
    }

    #[test]
    fn call_log_records_training() {
        let log = CallLog::default();
        let mut b = BuiltinBackend::new().with_call_log(log.clone());
        let base = b.base_model().unwrap();
        let m = b.train_mlm(&base, &corpus(), &TrainConfig::default()).unwrap();
        b.train_qa(&m, &tiny(), &TrainConfig::default().with_epochs(1)).unwrap();
        assert_eq!(*log.lock().unwrap(), ["train_mlm tiny []", "train_qa tiny [MLM]"]);
    }
}
