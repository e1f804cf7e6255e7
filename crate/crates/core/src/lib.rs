//! qfade-core: batch pipeline for predicting fading questions in
//! community-Q&A data dumps.
//!
//! The pipeline ingests site dumps taken at different times, stores the
//! per-dump fields in a compact columnar form, builds labeled datasets of
//! recently highly viewed questions, extracts five feature groups, and trains
//! gradient-boosted trees to predict which questions will lose most of their
//! views in the next period.
//!
//! Modules follow the data flow:
//!
//! - [`ingest`]: streaming parser for Posts/Users/Tags dump XML
//! - [`store`]: columnar per-dump snapshots and cross-dump view deltas
//! - [`cohort`]: labeled dataset construction and descriptive analyses
//! - [`featurize`]: text/question/user/answer/tag feature extraction
//! - [`stats`]: per-feature predictiveness (Mann-Whitney, Spearman, AUC)
//! - [`gbt`]: gradient-boosted decision trees with histogram splits
//! - [`evaluate`]: experiment harness (repeated splits, bins, rankings)
//! - [`synthgen`]: synthetic dump corpora with a plantable fading signal

pub mod cohort;
pub mod error;
pub mod evaluate;
pub mod featurize;
pub mod gbt;
pub mod ingest;
pub mod stats;
pub mod store;
pub mod synthgen;
pub mod timestamp;

pub use error::{PipelineError, Result};
pub use timestamp::Timestamp;

/// Header line stamped into emitted files, so outputs are traceable to the
/// producing tool version and configuration.
#[derive(Debug, Clone)]
pub struct OutputMeta {
    pub tool_version: String,
    pub config_hash: String,
}

impl OutputMeta {
    pub fn comment_line(&self) -> String {
        format!("# qfade {} config={}", self.tool_version, self.config_hash)
    }
}
