//! Harness for classifying the semantic relation between two research topics
//! with large language models.
//!
//! The pipeline: build a balanced gold set from a thesaurus, prompt a model
//! (standard or chain-of-thought, one or both topic orders), reconcile the two
//! orders when both were asked, and score the result per class.

pub mod backend;
pub mod label;
pub mod metrics;
pub mod parser;
pub mod prompt;
pub mod run;
pub mod strategy;
pub mod thesaurus;

pub use label::{statement_to_label, PredictionOutcome, RelationLabel, StatementNumber};
pub use metrics::EvalReport;
pub use strategy::{PairPrediction, StrategyKind};
pub use thesaurus::{GoldDataset, GoldRecord, TopicPair};
