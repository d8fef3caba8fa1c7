//! Fixtures and reference computations shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use ontorel_core::backend::{BackendConfig, Client, Orientation, Provider};
use ontorel_core::{GoldDataset, RelationLabel, TopicPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const MINI_GOLD: &str = include_str!("../fixtures/mini_gold.csv");
pub const TRUTH_TABLE: &str = include_str!("../fixtures/reconcile_truth_table.csv");

pub fn mini_gold() -> GoldDataset {
    GoldDataset::read_csv(MINI_GOLD.as_bytes()).expect("bundled mini gold set parses")
}

pub fn scripted_config(model: &str) -> BackendConfig {
    BackendConfig {
        provider_id: "scripted".into(),
        model_id: model.into(),
        max_in_flight: 4,
        ..Default::default()
    }
}

pub fn client_for(provider: impl Provider + 'static, model: &str) -> Client {
    Client::new(scripted_config(model), Arc::new(provider)).expect("valid config")
}

/// Corruption decision for one scripted answer, written from the documented
/// procedure: SHA-256 of `a 0x1F b 0x1F orientation`, first eight bytes
/// little-endian, XOR the seed, ChaCha8, one `f64` draw against the rate, then
/// an index into the other three labels.
pub fn reference_noise(
    seed: u64,
    rate: f64,
    pair: &TopicPair,
    orientation: &str,
    label: RelationLabel,
) -> RelationLabel {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(pair.topic_a.as_bytes());
    bytes.push(0x1f);
    bytes.extend_from_slice(pair.topic_b.as_bytes());
    bytes.push(0x1f);
    bytes.extend_from_slice(orientation.as_bytes());
    let digest = Sha256::digest(&bytes);
    let key = u64::from_le_bytes(digest[..8].try_into().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
    let u: f64 = rng.random();
    if u < rate {
        let others: Vec<RelationLabel> = RelationLabel::ALL
            .into_iter()
            .filter(|l| *l != label)
            .collect();
        others[rng.random_range(0..3)]
    } else {
        label
    }
}

pub fn orientation_name(o: Orientation) -> &'static str {
    match o {
        Orientation::Forward => "forward",
        Orientation::Reverse => "reverse",
    }
}

/// The committed reconciliation table keyed by `(f, s, len_a vs len_b)`.
pub fn truth_table() -> HashMap<(RelationLabel, RelationLabel, Ordering), (RelationLabel, u8)> {
    TRUTH_TABLE
        .lines()
        .skip(1)
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            let la: usize = c[2].parse().unwrap();
            let lb: usize = c[3].parse().unwrap();
            (
                (c[0].parse().unwrap(), c[1].parse().unwrap(), la.cmp(&lb)),
                (c[4].parse().unwrap(), c[5].parse().unwrap()),
            )
        })
        .collect()
}

/// Counts and scores computed directly from `(gold, predicted)` label pairs,
/// `None` standing for an unparsable answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceScores {
    pub matrix: [[u64; 5]; 4],
    pub precision: [f64; 4],
    pub recall: [f64; 4],
    pub f1: [f64; 4],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn reference_scores(outcomes: &[(RelationLabel, Option<RelationLabel>)]) -> ReferenceScores {
    let col = |p: Option<RelationLabel>| p.map_or(4, |l| l.index());
    let mut matrix = [[0u64; 5]; 4];
    for (g, p) in outcomes {
        matrix[g.index()][col(*p)] += 1;
    }
    let mut precision = [0.0; 4];
    let mut recall = [0.0; 4];
    let mut f1 = [0.0; 4];
    for c in 0..4 {
        let tp = matrix[c][c];
        let predicted: u64 = (0..4).map(|g| matrix[g][c]).sum();
        let support: u64 = matrix[c].iter().sum();
        precision[c] = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        recall[c] = if support == 0 {
            0.0
        } else {
            tp as f64 / support as f64
        };
        f1[c] = if precision[c] + recall[c] == 0.0 {
            0.0
        } else {
            2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        };
    }
    let mean = |v: &[f64; 4]| v.iter().sum::<f64>() / 4.0;
    ReferenceScores {
        matrix,
        precision,
        recall,
        f1,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
    }
}

/// A generated thesaurus with `n` one-sided NT links, `n` one-sided BT links,
/// `n` USE/UF pairs and `n / 3` loose terms, plus every unordered pair the
/// generator itself related.
pub fn synthetic_thesaurus(n: usize) -> (String, HashSet<(String, String)>) {
    let mut text = String::new();
    let mut related = HashSet::new();
    let key = |a: &str, b: &str| {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    };
    for i in 0..n {
        let (parent, child) = (
            format!("research area {i:04}"),
            format!("research subarea {i:04}"),
        );
        text.push_str(&format!("{parent}\n  NT {child}\n\n"));
        related.insert(key(&parent, &child));
    }
    for i in 0..n {
        let (child, parent) = (
            format!("method variant {i:04}"),
            format!("method family {i:04}"),
        );
        text.push_str(&format!("{child}\n  BT {parent}\n\n"));
        related.insert(key(&child, &parent));
    }
    for i in 0..n {
        let (alias, preferred) = (format!("alt name {i:04}"), format!("preferred name {i:04}"));
        text.push_str(&format!(
            "{alias}\n  USE {preferred}\n\n{preferred}\n  UF {alias}\n\n"
        ));
        related.insert(key(&alias, &preferred));
    }
    for i in 0..n / 3 {
        text.push_str(&format!("loose topic {i:04}\n\n"));
    }
    (text, related)
}
