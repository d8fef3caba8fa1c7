//! Relation labels, prediction outcomes and the numbered answer statements.
//!
//! Prompts offer six numbered statements about `(topic A, topic B)`. Statements
//! 2 and 4 phrase the relation from topic B's side, so they entail the same
//! A-to-B label as statements 1 and 3 respectively.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("unknown relation label `{0}` (expected broader, narrower, same-as or other)")]
    UnknownLabel(String),
    #[error("statement number {0} is outside 1..=6")]
    StatementOutOfRange(i64),
}

/// The four relation classes between an ordered topic pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationLabel {
    /// Topic A is a parent of topic B.
    Broader,
    /// Topic A is a child of topic B.
    Narrower,
    /// The topics name the same concept.
    SameAs,
    /// None of the above.
    Other,
}

impl RelationLabel {
    /// All labels in canonical report order.
    pub const ALL: [RelationLabel; 4] = [
        RelationLabel::Broader,
        RelationLabel::Narrower,
        RelationLabel::SameAs,
        RelationLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::Broader => "broader",
            RelationLabel::Narrower => "narrower",
            RelationLabel::SameAs => "same-as",
            RelationLabel::Other => "other",
        }
    }

    /// Position in [`RelationLabel::ALL`].
    pub fn index(self) -> usize {
        match self {
            RelationLabel::Broader => 0,
            RelationLabel::Narrower => 1,
            RelationLabel::SameAs => 2,
            RelationLabel::Other => 3,
        }
    }

    /// Relation of B to A given the relation of A to B. Broader and narrower
    /// swap; same-as and other are symmetric.
    pub fn inverse(self) -> RelationLabel {
        match self {
            RelationLabel::Broader => RelationLabel::Narrower,
            RelationLabel::Narrower => RelationLabel::Broader,
            RelationLabel::SameAs => RelationLabel::SameAs,
            RelationLabel::Other => RelationLabel::Other,
        }
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, RelationLabel::Broader | RelationLabel::Narrower)
    }

    /// The statement a model should pick to express this label from topic A's
    /// side (1, 3, 5 or 6).
    pub fn canonical_statement(self) -> StatementNumber {
        let n = match self {
            RelationLabel::Broader => 1,
            RelationLabel::Narrower => 3,
            RelationLabel::SameAs => 5,
            RelationLabel::Other => 6,
        };
        StatementNumber(n)
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "broader" => Ok(RelationLabel::Broader),
            "narrower" => Ok(RelationLabel::Narrower),
            "same-as" => Ok(RelationLabel::SameAs),
            "other" => Ok(RelationLabel::Other),
            _ => Err(LabelError::UnknownLabel(s.to_string())),
        }
    }
}

impl Serialize for RelationLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RelationLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Index of one of the six answer statements offered by the prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StatementNumber(u8);

impl StatementNumber {
    pub fn new(n: i64) -> Result<Self, LabelError> {
        if (1..=6).contains(&n) {
            Ok(StatementNumber(n as u8))
        } else {
            Err(LabelError::StatementOutOfRange(n))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// 1, 2 → broader; 3, 4 → narrower; 5 → same-as; 6 → other.
    pub fn label(self) -> RelationLabel {
        match self.0 {
            1 | 2 => RelationLabel::Broader,
            3 | 4 => RelationLabel::Narrower,
            5 => RelationLabel::SameAs,
            _ => RelationLabel::Other,
        }
    }
}

impl fmt::Display for StatementNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Free-function form of [`StatementNumber::label`].
pub fn statement_to_label(n: StatementNumber) -> RelationLabel {
    n.label()
}

/// What the parser made of a model answer.
///
/// `Invalid` is never equal to any label; comparing against a gold label
/// through [`PredictionOutcome::is`] is always false for it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PredictionOutcome {
    Label(RelationLabel),
    Invalid(String),
}

impl PredictionOutcome {
    pub const INVALID_TOKEN: &'static str = "invalid";

    pub fn label(&self) -> Option<RelationLabel> {
        match self {
            PredictionOutcome::Label(l) => Some(*l),
            PredictionOutcome::Invalid(_) => None,
        }
    }

    pub fn is(&self, label: RelationLabel) -> bool {
        self.label() == Some(label)
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, PredictionOutcome::Invalid(_))
    }

    /// Serialized token: a label name or `invalid`.
    pub fn token(&self) -> &'static str {
        match self {
            PredictionOutcome::Label(l) => l.as_str(),
            PredictionOutcome::Invalid(_) => Self::INVALID_TOKEN,
        }
    }

    /// Inverse of [`PredictionOutcome::token`]. The invalid reason is not
    /// serialized, so it comes back as `"unrecorded"`.
    pub fn from_token(token: &str) -> Result<Self, LabelError> {
        if token == Self::INVALID_TOKEN {
            Ok(PredictionOutcome::Invalid("unrecorded".to_string()))
        } else {
            token.parse().map(PredictionOutcome::Label)
        }
    }
}

impl From<RelationLabel> for PredictionOutcome {
    fn from(l: RelationLabel) -> Self {
        PredictionOutcome::Label(l)
    }
}

impl PartialEq<RelationLabel> for PredictionOutcome {
    fn eq(&self, other: &RelationLabel) -> bool {
        self.is(*other)
    }
}

impl fmt::Display for PredictionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}
