//! Topic pairs, gold datasets and the seeded balanced sampler.
//!
//! Sampling procedure, fixed so that a seed reproduces a dataset exactly:
//!
//! 1. Seed a ChaCha8 generator from `seed`.
//! 2. For broader, narrower, same-as in that order: take the class's triples in
//!    sorted order, shuffle them, then walk the shuffled list accepting a triple
//!    unless its unordered pair was already accepted (in any class).
//! 3. For other: draw two term indices uniformly from the sorted term list,
//!    rejecting self pairs, related pairs and already-used pairs.
//! 4. Shuffle the combined record list.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::label::RelationLabel;

use super::relations::{unordered_key, RelationTriple};
use super::GoldError;

/// Ordered pair of topic surface forms, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopicPair {
    pub topic_a: String,
    pub topic_b: String,
}

impl TopicPair {
    pub fn new(topic_a: impl Into<String>, topic_b: impl Into<String>) -> Result<Self, GoldError> {
        let pair = TopicPair {
            topic_a: topic_a.into(),
            topic_b: topic_b.into(),
        };
        if pair.topic_a.trim().is_empty() || pair.topic_b.trim().is_empty() {
            return Err(GoldError::InvalidRecord {
                pair: pair.describe(),
                reason: "empty topic".into(),
            });
        }
        Ok(pair)
    }

    pub fn reversed(&self) -> TopicPair {
        TopicPair {
            topic_a: self.topic_b.clone(),
            topic_b: self.topic_a.clone(),
        }
    }

    pub fn describe(&self) -> String {
        format!("({}, {})", self.topic_a, self.topic_b)
    }

    fn unordered(&self) -> (String, String) {
        unordered_key(&self.topic_a, &self.topic_b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub pair: TopicPair,
    pub label: RelationLabel,
}

impl GoldRecord {
    pub fn new(pair: TopicPair, label: RelationLabel) -> Result<Self, GoldError> {
        if pair.topic_a == pair.topic_b {
            return Err(GoldError::InvalidRecord {
                pair: pair.describe(),
                reason: "topics are identical".into(),
            });
        }
        Ok(GoldRecord { pair, label })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    topic_a: String,
    topic_b: String,
    label: RelationLabel,
}

/// A class-balanced labelled pair set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldDataset {
    records: Vec<GoldRecord>,
    seed: Option<u64>,
    per_class_count: usize,
}

impl GoldDataset {
    /// Checks class balance and pair uniqueness.
    pub fn new(records: Vec<GoldRecord>, seed: Option<u64>) -> Result<Self, GoldError> {
        let mut counts = [0usize; 4];
        for r in &records {
            counts[r.label.index()] += 1;
        }
        if counts.iter().any(|&c| c != counts[0]) {
            return Err(GoldError::Unbalanced {
                counts: RelationLabel::ALL
                    .iter()
                    .map(|l| (*l, counts[l.index()]))
                    .collect(),
            });
        }

        let mut ordered = HashSet::new();
        let mut by_unordered: BTreeMap<(String, String), RelationLabel> = BTreeMap::new();
        for r in &records {
            if !ordered.insert(r.pair.clone()) {
                return Err(GoldError::InvalidRecord {
                    pair: r.pair.describe(),
                    reason: "pair listed twice".into(),
                });
            }
            if let Some(prev) = by_unordered.insert(r.pair.unordered(), r.label) {
                if prev != r.label {
                    return Err(GoldError::InvalidRecord {
                        pair: r.pair.describe(),
                        reason: format!("pair also labelled {prev}"),
                    });
                }
            }
        }

        Ok(GoldDataset {
            records,
            seed,
            per_class_count: counts[0],
        })
    }

    pub fn records(&self) -> &[GoldRecord] {
        &self.records
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn per_class_count(&self) -> usize {
        self.per_class_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `topic_a,topic_b,label` CSV with LF line endings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GoldError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        if self.records.is_empty() {
            w.write_record(["topic_a", "topic_b", "label"])?;
        }
        for r in &self.records {
            w.serialize(CsvRow {
                topic_a: r.pair.topic_a.clone(),
                topic_b: r.pair.topic_b.clone(),
                label: r.label,
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GoldError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["topic_a", "topic_b", "label"] {
            return Err(GoldError::BadHeader(
                headers.iter().collect::<Vec<_>>().join(","),
            ));
        }
        let mut records = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            records.push(GoldRecord::new(
                TopicPair::new(row.topic_a, row.topic_b)?,
                row.label,
            )?);
        }
        GoldDataset::new(records, None)
    }

    /// SHA-256 over the canonical CSV serialization; identifies the dataset in
    /// reports and manifests.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldOptions {
    pub per_class: usize,
    pub seed: u64,
    /// Also reject `other` pairs linked through a chain of broader/narrower
    /// relations, not only directly.
    pub exclude_transitive: bool,
}

impl GoldOptions {
    pub fn new(per_class: usize, seed: u64) -> Self {
        GoldOptions {
            per_class,
            seed,
            exclude_transitive: false,
        }
    }
}

const POSITIVE_CLASSES: [RelationLabel; 3] = [
    RelationLabel::Broader,
    RelationLabel::Narrower,
    RelationLabel::SameAs,
];

pub fn build_gold(
    triples: &BTreeSet<RelationTriple>,
    all_terms: &BTreeSet<String>,
    options: GoldOptions,
) -> Result<GoldDataset, GoldError> {
    let per_class = options.per_class;
    if per_class == 0 {
        return GoldDataset::new(Vec::new(), Some(options.seed));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut used: HashSet<(String, String)> = HashSet::new();
    let mut records = Vec::with_capacity(per_class * 4);

    for label in POSITIVE_CLASSES {
        let mut candidates: Vec<&RelationTriple> =
            triples.iter().filter(|t| t.label == label).collect();
        let total = candidates.len();
        candidates.shuffle(&mut rng);
        let mut taken = 0;
        for t in candidates {
            if taken == per_class {
                break;
            }
            if used.insert(t.unordered()) {
                records.push(GoldRecord {
                    pair: TopicPair {
                        topic_a: t.subject.clone(),
                        topic_b: t.object.clone(),
                    },
                    label,
                });
                taken += 1;
            }
        }
        if taken < per_class {
            return Err(GoldError::Capacity {
                label,
                requested: per_class,
                available: taken,
                detail: format!(
                    "{total} triples, {} left after removing reversed duplicates",
                    taken
                ),
            });
        }
    }

    let related = related_pairs(triples, options.exclude_transitive);
    let terms: Vec<&String> = all_terms.iter().collect();
    let n = terms.len() as u128;
    let blocked = related
        .iter()
        .chain(used.iter())
        .filter(|(a, b)| all_terms.contains(a) && all_terms.contains(b))
        .collect::<HashSet<_>>()
        .len() as u128;
    let available = (n * n.saturating_sub(1) / 2).saturating_sub(blocked);
    if available < per_class as u128 {
        return Err(GoldError::Capacity {
            label: RelationLabel::Other,
            requested: per_class,
            available: available as usize,
            detail: format!("{} terms", terms.len()),
        });
    }

    let mut taken = 0;
    while taken < per_class {
        let i = rng.random_range(0..terms.len());
        let j = rng.random_range(0..terms.len());
        if i == j {
            continue;
        }
        let key = unordered_key(terms[i], terms[j]);
        if related.contains(&key) || used.contains(&key) {
            continue;
        }
        used.insert(key);
        records.push(GoldRecord {
            pair: TopicPair {
                topic_a: terms[i].clone(),
                topic_b: terms[j].clone(),
            },
            label: RelationLabel::Other,
        });
        taken += 1;
    }

    records.shuffle(&mut rng);
    GoldDataset::new(records, Some(options.seed))
}

/// Unordered pairs that may not be labelled `other`.
pub fn related_pairs(
    triples: &BTreeSet<RelationTriple>,
    transitive: bool,
) -> HashSet<(String, String)> {
    let mut out: HashSet<_> = triples.iter().map(RelationTriple::unordered).collect();
    if !transitive {
        return out;
    }

    // child -> parents
    let mut parents: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in triples {
        match t.label {
            RelationLabel::Narrower => {
                parents.entry(&t.subject).or_default().insert(&t.object);
            }
            RelationLabel::Broader => {
                parents.entry(&t.object).or_default().insert(&t.subject);
            }
            _ => {}
        }
    }
    for &start in parents.keys() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = parents[start].iter().copied().collect();
        while let Some(p) = stack.pop() {
            if p == start || !seen.insert(p) {
                continue;
            }
            out.insert(unordered_key(start, p));
            if let Some(next) = parents.get(p) {
                stack.extend(next.iter().copied());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use RelationLabel::*;

    fn triple(s: &str, l: RelationLabel, o: &str) -> RelationTriple {
        RelationTriple::new(s, l, o).unwrap()
    }

    fn rec(a: &str, b: &str, l: RelationLabel) -> GoldRecord {
        GoldRecord::new(TopicPair::new(a, b).unwrap(), l).unwrap()
    }

    #[test]
    fn per_class_zero_is_empty() {
        let d = build_gold(&BTreeSet::new(), &BTreeSet::new(), GoldOptions::new(0, 1)).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.to_csv_bytes(), b"topic_a,topic_b,label\n");
    }

    #[test]
    fn capacity_error_names_the_class() {
        let triples = BTreeSet::from([
            triple("a", Broader, "b"),
            triple("b", Narrower, "a"),
            triple("x", SameAs, "y"),
        ]);
        let terms: BTreeSet<String> = ["a", "b", "x", "y"].iter().map(|s| s.to_string()).collect();
        let err = build_gold(&triples, &terms, GoldOptions::new(1, 0)).unwrap_err();
        // The only narrower triple mirrors the broader one that was taken.
        match err {
            GoldError::Capacity { label, .. } => assert_eq!(label, Narrower),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_message(&triples, &terms).contains("narrower"));
    }

    fn err_message(triples: &BTreeSet<RelationTriple>, terms: &BTreeSet<String>) -> String {
        build_gold(triples, terms, GoldOptions::new(1, 0))
            .unwrap_err()
            .to_string()
    }

    #[test]
    fn other_capacity_checked_up_front() {
        let triples = BTreeSet::from([
            triple("a", Broader, "b"),
            triple("c", Narrower, "d"),
            triple("e", SameAs, "f"),
        ]);
        let terms: BTreeSet<String> = ["a", "b", "c", "d", "e", "f"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let d = build_gold(&triples, &terms, GoldOptions::new(1, 3)).unwrap();
        assert_eq!(d.len(), 4);
        // The only pair over {a, b} is related.
        let tiny: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let err = build_gold(&triples, &tiny, GoldOptions::new(1, 3)).unwrap_err();
        assert!(matches!(err, GoldError::Capacity { label: Other, .. }));
    }

    #[test]
    fn dataset_rejects_imbalance_and_conflicts() {
        assert!(matches!(
            GoldDataset::new(vec![rec("a", "b", Broader)], None),
            Err(GoldError::Unbalanced { .. })
        ));
        let conflicting = vec![
            rec("a", "b", Broader),
            rec("b", "a", Narrower),
            rec("c", "d", SameAs),
            rec("e", "f", SameAs),
            rec("g", "h", Other),
            rec("i", "j", Other),
            rec("k", "l", Broader),
            rec("m", "n", Narrower),
        ];
        assert!(matches!(
            GoldDataset::new(conflicting, None),
            Err(GoldError::InvalidRecord { .. })
        ));
    }

    #[test]
    fn csv_round_trip_with_quoting() {
        let records = vec![
            rec("Hall effect, quantum", "it's \"odd\"", Broader),
            rec("x", "y", Narrower),
            rec("p", "q", SameAs),
            rec("r", "s", Other),
        ];
        let d = GoldDataset::new(records, None).unwrap();
        let bytes = d.to_csv_bytes();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(
            "topic_a,topic_b,label\n\"Hall effect, quantum\",\"it's \"\"odd\"\"\",broader\n"
        ));
        let back = GoldDataset::read_csv(bytes.as_slice()).unwrap();
        assert_eq!(back.records(), d.records());
        assert_eq!(back.checksum(), d.checksum());
    }

    #[test]
    fn bad_header_rejected() {
        let err = GoldDataset::read_csv("a,b,c\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GoldError::BadHeader(_)));
    }

    #[test]
    fn transitive_closure_adds_ancestors() {
        let triples = BTreeSet::from([
            triple("child", Narrower, "parent"),
            triple("parent", Narrower, "root"),
        ]);
        let direct = related_pairs(&triples, false);
        let closed = related_pairs(&triples, true);
        let key = unordered_key("child", "root");
        assert!(!direct.contains(&key));
        assert!(closed.contains(&key));
    }
}
