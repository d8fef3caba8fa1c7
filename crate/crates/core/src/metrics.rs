//! Per-class precision, recall and F1, macro averages and confusion matrices.
//!
//! Unparsable answers get their own matrix column. They count against the
//! recall of the gold class and enter no precision denominator. A class that
//! is never predicted (or has no gold support) scores 0 and is flagged.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{PredictionOutcome, RelationLabel};
use crate::strategy::{PairPrediction, StrategyKind};
use crate::thesaurus::{GoldDataset, TopicPair};

/// Column headers of the confusion matrix, predicted side.
pub const PREDICTED_COLUMNS: [&str; 5] = ["broader", "narrower", "same-as", "other", "invalid"];
const INVALID_COLUMN: usize = 4;
const LIST_LIMIT: usize = 10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("predictions do not cover the gold set: {0}")]
    Coverage(CoverageReport),
    #[error("prediction for {pair} uses strategy {found}, expected {expected}")]
    MixedStrategy {
        pair: String,
        found: StrategyKind,
        expected: StrategyKind,
    },
    #[error("reports were computed on different gold sets ({a} vs {b})")]
    DatasetMismatch { a: String, b: String },
    #[error("report output: {0}")]
    Io(#[from] std::io::Error),
    #[error("report output: {0}")]
    Csv(#[from] csv::Error),
}

/// Pairs that stop predictions from lining up one-to-one with gold records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageReport {
    pub missing: Vec<TopicPair>,
    pub duplicate: Vec<TopicPair>,
    pub extra: Vec<TopicPair>,
}

impl CoverageReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.duplicate.is_empty() && self.extra.is_empty()
    }
}

impl std::fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        for (name, pairs) in [
            ("missing", &self.missing),
            ("duplicate", &self.duplicate),
            ("not in gold", &self.extra),
        ] {
            if pairs.is_empty() {
                continue;
            }
            let mut listed: Vec<String> = pairs
                .iter()
                .take(LIST_LIMIT)
                .map(TopicPair::describe)
                .collect();
            if pairs.len() > LIST_LIMIT {
                listed.push(format!("... {} more", pairs.len() - LIST_LIMIT));
            }
            parts.push(format!("{} {name}: {}", pairs.len(), listed.join(", ")));
        }
        f.write_str(&parts.join("; "))
    }
}

/// Gold rows by predicted columns (the fifth column is `invalid`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 4],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn column(outcome: &PredictionOutcome) -> usize {
        outcome.label().map_or(INVALID_COLUMN, RelationLabel::index)
    }

    pub fn record(&mut self, gold: RelationLabel, predicted: &PredictionOutcome) {
        self.counts[gold.index()][Self::column(predicted)] += 1;
    }

    pub fn get(&self, gold: RelationLabel, predicted: &PredictionOutcome) -> u64 {
        self.counts[gold.index()][Self::column(predicted)]
    }

    pub fn true_positives(&self, label: RelationLabel) -> u64 {
        self.counts[label.index()][label.index()]
    }

    /// Gold count of a class.
    pub fn support(&self, label: RelationLabel) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    /// How often a class was the final answer.
    pub fn predicted(&self, label: RelationLabel) -> u64 {
        self.counts.iter().map(|row| row[label.index()]).sum()
    }

    pub fn invalid(&self) -> u64 {
        self.counts.iter().map(|row| row[INVALID_COLUMN]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut w = csv_writer(writer);
        let mut header = vec!["gold"];
        header.extend(PREDICTED_COLUMNS);
        w.write_record(&header)?;
        for label in RelationLabel::ALL {
            let mut row = vec![label.as_str().to_string()];
            row.extend(self.counts[label.index()].iter().map(u64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: RelationLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Precision was defined as 0 because the class was never predicted.
    pub never_predicted: bool,
    /// Recall was defined as 0 because the class has no gold records.
    pub no_support: bool,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean. Empty input gives 0.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Scores for each class, derived from the matrix alone.
pub fn class_scores(matrix: &ConfusionMatrix) -> [ClassScores; 4] {
    RelationLabel::ALL.map(|label| {
        let tp = matrix.true_positives(label);
        let (precision, never_predicted) = ratio(tp, matrix.predicted(label));
        let (recall, no_support) = ratio(tp, matrix.support(label));
        ClassScores {
            label,
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: matrix.support(label),
            never_predicted,
            no_support,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Checksum of the gold CSV the predictions were scored against.
    pub dataset_id: String,
    pub model_id: String,
    pub strategy: StrategyKind,
    pub parse_policy: String,
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub matrix: ConfusionMatrix,
    pub invalid_count: u64,
}

/// Everything a report carries besides the numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportMeta {
    pub model_id: String,
    pub strategy: StrategyKind,
    pub parse_policy: String,
}

impl EvalReport {
    pub fn from_matrix(matrix: ConfusionMatrix, dataset_id: String, meta: ReportMeta) -> Self {
        let per_class = class_scores(&matrix);
        let mean = |get: fn(&ClassScores) -> f64| {
            macro_average(&per_class.iter().map(get).collect::<Vec<_>>())
        };
        EvalReport {
            dataset_id,
            model_id: meta.model_id,
            strategy: meta.strategy,
            parse_policy: meta.parse_policy,
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            per_class: per_class.to_vec(),
            invalid_count: matrix.invalid(),
            matrix,
        }
    }

    pub fn class(&self, label: RelationLabel) -> Option<&ClassScores> {
        self.per_class.iter().find(|c| c.label == label)
    }

    /// Machine-readable scores: one row per class, then `macro`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut w = csv_writer(writer);
        w.write_record(["class", "precision", "recall", "f1", "support"])?;
        for c in &self.per_class {
            w.write_record([
                c.label.as_str().to_string(),
                format3(c.precision),
                format3(c.recall),
                format3(c.f1),
                c.support.to_string(),
            ])?;
        }
        w.write_record([
            "macro".to_string(),
            format3(self.macro_precision),
            format3(self.macro_recall),
            format3(self.macro_f1),
            self.matrix.total().to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table for people.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model:        {}", self.model_id);
        let _ = writeln!(out, "strategy:     {}", self.strategy);
        let _ = writeln!(out, "parse policy: {}", self.parse_policy);
        let _ = writeln!(
            out,
            "invalid:      {} of {}",
            self.invalid_count,
            self.matrix.total()
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        let mut notes = Vec::new();
        for c in &self.per_class {
            let mut mark = String::new();
            if c.never_predicted {
                mark.push('*');
                notes.push(format!(
                    "* {} was never predicted; precision set to 0",
                    c.label
                ));
            }
            if c.no_support {
                mark.push('+');
                notes.push(format!(
                    "+ {} has no gold records; recall set to 0",
                    c.label
                ));
            }
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>9} {:>9} {:>8}",
                format!("{}{mark}", c.label),
                format3(c.precision),
                format3(c.recall),
                format3(c.f1),
                c.support
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>8}",
            "AVG",
            format3(self.macro_precision),
            format3(self.macro_recall),
            format3(self.macro_f1),
            self.matrix.total()
        );
        if !notes.is_empty() {
            let _ = writeln!(out);
            for n in notes {
                let _ = writeln!(out, "{n}");
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Scores predictions against gold. Every gold pair needs exactly one
/// prediction for the same ordered pair, and nothing else may be present.
pub fn score(
    predictions: &[PairPrediction],
    gold: &GoldDataset,
    meta: ReportMeta,
) -> Result<EvalReport, MetricsError> {
    let labels: HashMap<&TopicPair, RelationLabel> =
        gold.records().iter().map(|r| (&r.pair, r.label)).collect();
    let mut seen: HashSet<&TopicPair> = HashSet::new();
    let mut coverage = CoverageReport::default();
    let mut matrix = ConfusionMatrix::new();

    for p in predictions {
        if p.strategy != meta.strategy {
            return Err(MetricsError::MixedStrategy {
                pair: p.pair.describe(),
                found: p.strategy,
                expected: meta.strategy,
            });
        }
        let Some(&label) = labels.get(&p.pair) else {
            coverage.extra.push(p.pair.clone());
            continue;
        };
        if !seen.insert(&p.pair) {
            coverage.duplicate.push(p.pair.clone());
            continue;
        }
        matrix.record(label, &p.final_outcome);
    }
    coverage.missing = gold
        .records()
        .iter()
        .filter(|r| !seen.contains(&r.pair))
        .map(|r| r.pair.clone())
        .collect();
    if !coverage.is_clean() {
        for list in [
            &mut coverage.missing,
            &mut coverage.duplicate,
            &mut coverage.extra,
        ] {
            list.sort();
            list.dedup();
        }
        return Err(MetricsError::Coverage(coverage));
    }
    Ok(EvalReport::from_matrix(matrix, gold.checksum(), meta))
}

/// `b - a` for the macro scores and each class F1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDiff {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<(RelationLabel, f64)>,
}

impl ReportDiff {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>7}", "metric", "delta");
        let mut row = |name: String, v: f64| {
            let _ = writeln!(out, "{name:<16} {:>7}", format_signed3(v));
        };
        row("macro precision".into(), self.macro_precision);
        row("macro recall".into(), self.macro_recall);
        row("macro f1".into(), self.macro_f1);
        for (label, d) in &self.per_class_f1 {
            row(format!("{label} f1"), *d);
        }
        out
    }
}

pub fn diff_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDiff, MetricsError> {
    if a.dataset_id != b.dataset_id {
        return Err(MetricsError::DatasetMismatch {
            a: a.dataset_id.clone(),
            b: b.dataset_id.clone(),
        });
    }
    let f1_of = |r: &EvalReport, l| r.class(l).map_or(0.0, |c| c.f1);
    Ok(ReportDiff {
        macro_precision: b.macro_precision - a.macro_precision,
        macro_recall: b.macro_recall - a.macro_recall,
        macro_f1: b.macro_f1 - a.macro_f1,
        per_class_f1: RelationLabel::ALL
            .iter()
            .map(|&l| (l, f1_of(b, l) - f1_of(a, l)))
            .collect(),
    })
}

/// Rounds to `decimals` places, ties to even. A value within 1e-9 of a
/// decimal tie counts as the tie, so `0.8465` becomes `0.846` even though its
/// binary value sits slightly off the midpoint.
pub fn round_half_even(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let rounded = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    rounded / scale
}

/// Three decimals, ties to even.
pub fn format3(x: f64) -> String {
    let r = round_half_even(x, 3);
    let s = format!("{r:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn format_signed3(x: f64) -> String {
    let s = format3(x);
    if s.starts_with('-') || s == "0.000" {
        s
    } else {
        format!("+{s}")
    }
}

fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer)
}
