//! Thesaurus input, relation extraction and gold-standard construction.

mod gold;
mod parse;
mod relations;

use thiserror::Error;

use crate::label::RelationLabel;

pub use gold::{build_gold, related_pairs, GoldDataset, GoldOptions, GoldRecord, TopicPair};
pub use parse::{
    normalize_term, parse_str, parse_thesaurus, ParseWarning, Tag, Thesaurus, ThesaurusEntry,
};
pub use relations::{extract_relations, Extraction, ReciprocityIssue, RelationTriple};

#[derive(Debug, Error)]
pub enum ThesaurusError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: read failed: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

impl ThesaurusError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        ThesaurusError::Malformed {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("not enough {label} pairs: requested {requested}, found {available} ({detail})")]
    Capacity {
        label: RelationLabel,
        requested: usize,
        available: usize,
        detail: String,
    },
    #[error("invalid record {pair}: {reason}")]
    InvalidRecord { pair: String, reason: String },
    #[error("dataset is not class-balanced: {counts:?}")]
    Unbalanced { counts: Vec<(RelationLabel, usize)> },
    #[error("expected header `topic_a,topic_b,label`, found `{0}`")]
    BadHeader(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
