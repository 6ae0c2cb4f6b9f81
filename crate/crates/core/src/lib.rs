//! Experiment harness for extractive question answering under small
//! annotation budgets: SQuAD-format data handling, budgeted k-fold sampling,
//! dataset-merging fine-tuning strategies, corpus analysis, token-F1
//! evaluation, pluggable training backends, and a resumable grid runner.

pub mod analysis;
pub mod dataset;
pub mod evaluation;
pub mod orchestrator;
pub mod sampling;
pub mod strategies;
pub mod synthetic;
pub mod text;
pub mod trainer;
