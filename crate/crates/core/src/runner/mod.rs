//! Experiment orchestration: configuration, the offline indexing stage,
//! the online retrieval stage, evaluation and multi-variant studies.

mod config;
mod pipeline;
mod study;

pub use config::{DatasetPaths, EmbeddingSettings, ExperimentConfig, LlmSettings, Mode, Retriever, DEFAULT_TOPICS};
pub use pipeline::{offline_stage, run_experiment, IndexHandle, IndexKind, RunArtifacts, Workspace};
pub use study::{ablate, sweep_topics, StudyRow, StudyTable, SWEEP_DOC_COUNTS, SWEEP_QUERY_COUNTS};
