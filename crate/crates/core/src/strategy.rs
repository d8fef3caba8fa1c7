//! The four experiment strategies and two-way reconciliation.
//!
//! A strategy combines a prompting style (standard or chain-of-thought) with
//! a direction. One-way runs ask about `(A, B)` only. Two-way runs also ask
//! about `(B, A)` and merge both answers with [`reconcile`]:
//!
//! | rule | condition | result |
//! |------|-----------|--------|
//! | 1 | f = broader, s = narrower | broader |
//! | 2 | f = narrower, s = broader | narrower |
//! | 3 | f = s, hierarchical, len(A) <= len(B) | broader |
//! | 4 | f = s, hierarchical, len(A) > len(B) | narrower |
//! | 5 | f = s = same-as | same-as |
//! | 6 | (broader, other) or (other, narrower) | broader |
//! | 7 | (narrower, other) or (other, broader) | narrower |
//! | 8 | anything else | f |
//!
//! `f` is the forward answer (A to B) and `s` the reverse answer (B to A).
//! Lengths count Unicode scalar values. When only one branch produced a
//! label, the final label is that branch read from A's side and no rule is
//! recorded.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backend::{
    BackendError, Completer, CompletionRequest, Orientation, Phase, RequestContext,
};
use crate::label::{PredictionOutcome, RelationLabel};
use crate::parser::{parse_response, ParsePolicy};
use crate::prompt::{render, PromptError, PromptTemplate, TemplateKind};
use crate::thesaurus::{GoldDataset, TopicPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prompting {
    Standard,
    Cot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    OneWay,
    TwoWay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyKind {
    pub prompting: Prompting,
    pub direction: Direction,
}

impl StrategyKind {
    pub const STD_1W: StrategyKind = StrategyKind::new(Prompting::Standard, Direction::OneWay);
    pub const STD_2W: StrategyKind = StrategyKind::new(Prompting::Standard, Direction::TwoWay);
    pub const COT_1W: StrategyKind = StrategyKind::new(Prompting::Cot, Direction::OneWay);
    pub const COT_2W: StrategyKind = StrategyKind::new(Prompting::Cot, Direction::TwoWay);

    pub const ALL: [StrategyKind; 4] = [Self::STD_1W, Self::STD_2W, Self::COT_1W, Self::COT_2W];

    pub const fn new(prompting: Prompting, direction: Direction) -> Self {
        StrategyKind {
            prompting,
            direction,
        }
    }

    pub fn token(self) -> &'static str {
        match (self.prompting, self.direction) {
            (Prompting::Standard, Direction::OneWay) => "std-1w",
            (Prompting::Standard, Direction::TwoWay) => "std-2w",
            (Prompting::Cot, Direction::OneWay) => "cot-1w",
            (Prompting::Cot, Direction::TwoWay) => "cot-2w",
        }
    }

    pub fn is_two_way(self) -> bool {
        self.direction == Direction::TwoWay
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.token() == s.trim())
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_string()))
    }
}

impl Serialize for StrategyKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for StrategyKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("unknown strategy `{0}` (expected std-1w, std-2w, cot-1w or cot-2w)")]
    UnknownStrategy(String),
    #[error("pair {pair}: {source}")]
    Backend {
        pair: String,
        #[source]
        source: BackendError,
    },
    #[error("pair {pair}: {source}")]
    Prompt {
        pair: String,
        #[source]
        source: PromptError,
    },
    #[error("predictions file, record {record}: {reason}")]
    Format { record: usize, reason: String },
    #[error("predictions file: {0}")]
    Csv(#[from] csv::Error),
}

impl StrategyError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            StrategyError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchOutcome {
    /// Forward answer: relation of topic A to topic B.
    pub f: PredictionOutcome,
    /// Reverse answer: relation of topic B to topic A. Two-way runs only.
    pub s: Option<PredictionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPrediction {
    pub pair: TopicPair,
    pub strategy: StrategyKind,
    pub branches: BranchOutcome,
    pub final_outcome: PredictionOutcome,
    /// Reconciliation rule (1 to 8) when both branches were valid.
    pub applied_rule: Option<u8>,
}

/// Merges the two branch labels. Returns the label and the rule that fired.
pub fn reconcile(
    f: RelationLabel,
    s: RelationLabel,
    len_a: usize,
    len_b: usize,
) -> (RelationLabel, u8) {
    use RelationLabel::*;
    match (f, s) {
        (Broader, Narrower) => (Broader, 1),
        (Narrower, Broader) => (Narrower, 2),
        (Broader, Broader) | (Narrower, Narrower) if len_a <= len_b => (Broader, 3),
        (Broader, Broader) | (Narrower, Narrower) => (Narrower, 4),
        (SameAs, SameAs) => (SameAs, 5),
        (Broader, Other) | (Other, Narrower) => (Broader, 6),
        (Narrower, Other) | (Other, Broader) => (Narrower, 7),
        _ => (f, 8),
    }
}

/// Surface-form length used by rules 3 and 4.
pub fn topic_length(topic: &str) -> usize {
    topic.chars().count()
}

/// Final outcome of a two-way pair from its branches.
pub fn combine(
    pair: &TopicPair,
    f: &PredictionOutcome,
    s: &PredictionOutcome,
) -> (PredictionOutcome, Option<u8>) {
    match (f.label(), s.label()) {
        (Some(fl), Some(sl)) => {
            let (label, rule) = reconcile(
                fl,
                sl,
                topic_length(&pair.topic_a),
                topic_length(&pair.topic_b),
            );
            (label.into(), Some(rule))
        }
        (Some(fl), None) => (fl.into(), None),
        (None, Some(sl)) => (sl.inverse().into(), None),
        (None, None) => {
            let reason = |o: &PredictionOutcome| match o {
                PredictionOutcome::Invalid(r) => r.clone(),
                PredictionOutcome::Label(l) => l.to_string(),
            };
            (
                PredictionOutcome::Invalid(format!(
                    "forward: {}; reverse: {}",
                    reason(f),
                    reason(s)
                )),
                None,
            )
        }
    }
}

/// Parse policy and token budgets shared by every call of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategySettings {
    pub policy: ParsePolicy,
    pub answer_tokens: u32,
    pub discussion_tokens: u32,
}

impl Default for StrategySettings {
    fn default() -> Self {
        StrategySettings {
            policy: ParsePolicy::default(),
            answer_tokens: 512,
            discussion_tokens: 1024,
        }
    }
}

/// Counters handed to the progress callback after each finished pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
    pub invalid: usize,
}

/// Result of a batch. Predictions keep input order; pairs that were never
/// attempted because the batch stopped early are simply absent.
#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub predictions: Vec<PairPrediction>,
    pub errors: Vec<StrategyError>,
}

pub struct Runner<'a> {
    completer: &'a dyn Completer,
    settings: StrategySettings,
    standard: PromptTemplate,
    cot_phase1: PromptTemplate,
    cot_phase2: PromptTemplate,
}

impl<'a> Runner<'a> {
    pub fn new(completer: &'a dyn Completer, settings: StrategySettings) -> Self {
        Runner {
            completer,
            settings,
            standard: PromptTemplate::builtin(TemplateKind::Standard),
            cot_phase1: PromptTemplate::builtin(TemplateKind::CotPhase1),
            cot_phase2: PromptTemplate::builtin(TemplateKind::CotPhase2),
        }
    }

    pub fn settings(&self) -> StrategySettings {
        self.settings
    }

    pub fn run_pair(
        &self,
        pair: &TopicPair,
        strategy: StrategyKind,
    ) -> Result<PairPrediction, StrategyError> {
        match strategy.direction {
            Direction::OneWay => self.run_one_way(pair, strategy.prompting),
            Direction::TwoWay => self.run_two_way(pair, strategy.prompting),
        }
    }

    pub fn run_one_way(
        &self,
        pair: &TopicPair,
        prompting: Prompting,
    ) -> Result<PairPrediction, StrategyError> {
        let f = self.branch(pair, Orientation::Forward, prompting)?;
        Ok(PairPrediction {
            pair: pair.clone(),
            strategy: StrategyKind::new(prompting, Direction::OneWay),
            final_outcome: f.clone(),
            branches: BranchOutcome { f, s: None },
            applied_rule: None,
        })
    }

    pub fn run_two_way(
        &self,
        pair: &TopicPair,
        prompting: Prompting,
    ) -> Result<PairPrediction, StrategyError> {
        let f = self.branch(pair, Orientation::Forward, prompting)?;
        let s = self.branch(pair, Orientation::Reverse, prompting)?;
        let (final_outcome, applied_rule) = combine(pair, &f, &s);
        Ok(PairPrediction {
            pair: pair.clone(),
            strategy: StrategyKind::new(prompting, Direction::TwoWay),
            branches: BranchOutcome { f, s: Some(s) },
            final_outcome,
            applied_rule,
        })
    }

    /// One branch: the prompt(s) for `pair` in the given orientation, parsed.
    fn branch(
        &self,
        pair: &TopicPair,
        orientation: Orientation,
        prompting: Prompting,
    ) -> Result<PredictionOutcome, StrategyError> {
        let asked = match orientation {
            Orientation::Forward => pair.clone(),
            Orientation::Reverse => pair.reversed(),
        };
        let prompt_err = |source| StrategyError::Prompt {
            pair: pair.describe(),
            source,
        };
        let answer_text = match prompting {
            Prompting::Standard => {
                let prompt = render(&self.standard, &asked, None).map_err(prompt_err)?;
                self.call(pair, orientation, Phase::Answer, prompt.text)?
            }
            Prompting::Cot => {
                let first = render(&self.cot_phase1, &asked, None).map_err(prompt_err)?;
                let discussion = self.call(pair, orientation, Phase::Discussion, first.text)?;
                let second =
                    render(&self.cot_phase2, &asked, Some(&discussion)).map_err(prompt_err)?;
                self.call(pair, orientation, Phase::Answer, second.text)?
            }
        };
        Ok(parse_response(&answer_text, self.settings.policy))
    }

    fn call(
        &self,
        pair: &TopicPair,
        orientation: Orientation,
        phase: Phase,
        prompt: String,
    ) -> Result<String, StrategyError> {
        let budget = match phase {
            Phase::Answer => self.settings.answer_tokens,
            Phase::Discussion => self.settings.discussion_tokens,
        };
        let request = CompletionRequest::new(prompt, budget).with_context(RequestContext {
            pair: pair.clone(),
            orientation,
            phase,
        });
        self.completer
            .complete(&request)
            .map(|ex| ex.response)
            .map_err(|source| StrategyError::Backend {
                pair: pair.describe(),
                source,
            })
    }

    /// Runs every pair on up to `workers` threads. The first error stops new
    /// pairs from being started; pairs already in progress finish.
    pub fn run_batch<F>(
        &self,
        pairs: &[TopicPair],
        strategy: StrategyKind,
        workers: usize,
        progress: F,
    ) -> BatchOutcome
    where
        F: Fn(Progress) + Sync,
    {
        let total = pairs.len();
        let next = AtomicUsize::new(0);
        let done = AtomicUsize::new(0);
        let invalid = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<Result<PairPrediction, StrategyError>>>> =
            (0..total).map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers.clamp(1, total.max(1)) {
                scope.spawn(|| loop {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= total {
                        break;
                    }
                    let result = self.run_pair(&pairs[i], strategy);
                    match &result {
                        Ok(p) if p.final_outcome.is_invalid() => {
                            invalid.fetch_add(1, Ordering::SeqCst);
                        }
                        Ok(_) => {}
                        Err(_) => stop.store(true, Ordering::SeqCst),
                    }
                    *slots[i].lock().expect("result slot poisoned") = Some(result);
                    progress(Progress {
                        done: done.fetch_add(1, Ordering::SeqCst) + 1,
                        total,
                        invalid: invalid.load(Ordering::SeqCst),
                    });
                });
            }
        });

        let mut outcome = BatchOutcome::default();
        for slot in slots {
            match slot.into_inner().expect("result slot poisoned") {
                Some(Ok(p)) => outcome.predictions.push(p),
                Some(Err(e)) => outcome.errors.push(e),
                None => {}
            }
        }
        outcome
    }
}

pub const PREDICTION_HEADER: [&str; 8] = [
    "topic_a",
    "topic_b",
    "gold",
    "strategy",
    "f_label",
    "s_label",
    "final",
    "applied_rule",
];

/// Writes predictions as CSV. The gold column is looked up in `gold` by
/// ordered pair and left empty when absent.
pub fn write_predictions<W: Write>(
    writer: W,
    predictions: &[PairPrediction],
    gold: &GoldDataset,
) -> Result<(), StrategyError> {
    let labels: HashMap<&TopicPair, RelationLabel> =
        gold.records().iter().map(|r| (&r.pair, r.label)).collect();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(PREDICTION_HEADER)?;
    for p in predictions {
        let rule = p.applied_rule.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([
            p.pair.topic_a.as_str(),
            p.pair.topic_b.as_str(),
            labels.get(&p.pair).map(|l| l.as_str()).unwrap_or(""),
            p.strategy.token(),
            p.branches.f.token(),
            p.branches.s.as_ref().map(|s| s.token()).unwrap_or(""),
            p.final_outcome.token(),
            rule.as_str(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn predictions_to_csv_bytes(predictions: &[PairPrediction], gold: &GoldDataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_predictions(&mut out, predictions, gold).expect("writing to memory");
    out
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    topic_a: String,
    topic_b: String,
    #[allow(dead_code)]
    gold: String,
    strategy: String,
    f_label: String,
    s_label: String,
    #[serde(rename = "final")]
    final_label: String,
    applied_rule: String,
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PairPrediction>, StrategyError> {
    let mut r = csv::ReaderBuilder::new().from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(PREDICTION_HEADER) {
        return Err(StrategyError::Format {
            record: 0,
            reason: format!("expected header `{}`", PREDICTION_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<PredictionRow>().enumerate() {
        let record = i + 1;
        let row = row?;
        let bad = |reason: String| StrategyError::Format { record, reason };
        let outcome =
            |token: &str| PredictionOutcome::from_token(token).map_err(|e| bad(e.to_string()));

        let strategy: StrategyKind = row
            .strategy
            .parse()
            .map_err(|e: StrategyError| bad(e.to_string()))?;
        let pair = TopicPair::new(row.topic_a, row.topic_b).map_err(|e| bad(e.to_string()))?;
        let f = outcome(&row.f_label)?;
        let s = match (strategy.is_two_way(), row.s_label.is_empty()) {
            (true, false) => Some(outcome(&row.s_label)?),
            (false, true) => None,
            (true, true) => return Err(bad("two-way prediction without s_label".into())),
            (false, false) => return Err(bad("one-way prediction with s_label".into())),
        };
        let applied_rule = if row.applied_rule.is_empty() {
            None
        } else {
            match row.applied_rule.parse::<u8>() {
                Ok(n @ 1..=8) => Some(n),
                _ => {
                    return Err(bad(format!(
                        "applied_rule `{}` is not in 1..=8",
                        row.applied_rule
                    )))
                }
            }
        };
        out.push(PairPrediction {
            pair,
            strategy,
            branches: BranchOutcome { f, s },
            final_outcome: outcome(&row.final_label)?,
            applied_rule,
        });
    }
    Ok(out)
}
