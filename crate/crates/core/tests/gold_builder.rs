//! Gold-builder checks against a reference sampler written from the sampling
//! procedure alone, plus a frozen copy of its output for the tiny fixture.

use std::collections::{BTreeSet, HashSet};

use ontorel_core::thesaurus::{
    build_gold, extract_relations, parse_str, GoldOptions, RelationTriple,
};
use ontorel_core::RelationLabel::{self, *};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: &str = include_str!("fixtures/tiny_thesaurus.txt");
const TINY_GOLD_SEED7: &str = include_str!("fixtures/tiny_gold_seed7.csv");

const HIERARCHY: [(&str, &str); 4] = [
    ("computer networks", "network protocols"),
    ("signal processing", "audio coding"),
    ("robotics", "humanoid robots"),
    ("databases", "distributed databases"),
];
const SYNONYMS: [(&str, &str); 4] = [
    ("neural nets", "artificial neural networks"),
    ("iot", "internet of things"),
    ("drones", "unmanned aerial vehicles"),
    ("svm", "support vector machines"),
];
const LOOSE: [&str; 4] = ["cyclones", "crop yield", "hearing aids", "ocean acoustics"];

/// Hand-listed `(subject, object, label)` triples of the tiny fixture.
fn tiny_triples() -> Vec<(String, String, RelationLabel)> {
    let mut out = Vec::new();
    for (parent, child) in HIERARCHY {
        out.push((parent.to_string(), child.to_string(), Broader));
        out.push((child.to_string(), parent.to_string(), Narrower));
    }
    for (alias, preferred) in SYNONYMS {
        out.push((alias.to_string(), preferred.to_string(), SameAs));
    }
    out
}

fn tiny_terms() -> Vec<String> {
    let mut terms: BTreeSet<String> = BTreeSet::new();
    for (a, b) in HIERARCHY.iter().chain(SYNONYMS.iter()) {
        terms.insert(a.to_string());
        terms.insert(b.to_string());
    }
    terms.extend(LOOSE.iter().map(|s| s.to_string()));
    terms.into_iter().collect()
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Reference sampler: seeded ChaCha8; per positive class, sorted candidates
/// shuffled and accepted unless the unordered pair is taken; `other` by
/// rejection over uniform index pairs; final shuffle.
fn reference_sample(
    triples: &[(String, String, RelationLabel)],
    terms: &[String],
    per_class: usize,
    seed: u64,
) -> Vec<(String, String, RelationLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut out = Vec::new();
    for label in [Broader, Narrower, SameAs] {
        let mut cands: Vec<&(String, String, RelationLabel)> =
            triples.iter().filter(|t| t.2 == label).collect();
        cands.sort();
        cands.shuffle(&mut rng);
        let mut n = 0;
        for t in cands {
            if n == per_class {
                break;
            }
            if used.insert(key(&t.0, &t.1)) {
                out.push(t.clone());
                n += 1;
            }
        }
        assert_eq!(n, per_class, "reference ran out of {label}");
    }
    let related: HashSet<_> = triples.iter().map(|t| key(&t.0, &t.1)).collect();
    let mut n = 0;
    while n < per_class {
        let i = rng.random_range(0..terms.len());
        let j = rng.random_range(0..terms.len());
        if i == j {
            continue;
        }
        let k = key(&terms[i], &terms[j]);
        if related.contains(&k) || used.contains(&k) {
            continue;
        }
        used.insert(k);
        out.push((terms[i].clone(), terms[j].clone(), Other));
        n += 1;
    }
    out.shuffle(&mut rng);
    out
}

fn to_csv(rows: &[(String, String, RelationLabel)]) -> String {
    let mut s = String::from("topic_a,topic_b,label\n");
    for (a, b, l) in rows {
        s.push_str(&format!("{a},{b},{l}\n"));
    }
    s
}

fn tiny_build(per_class: usize, seed: u64) -> String {
    let thesaurus = parse_str(TINY).unwrap();
    assert!(thesaurus.warnings.is_empty(), "{:?}", thesaurus.warnings);
    let extraction = extract_relations(&thesaurus);
    let gold = build_gold(
        &extraction.triples,
        &thesaurus.all_terms(),
        GoldOptions::new(per_class, seed),
    )
    .unwrap();
    String::from_utf8(gold.to_csv_bytes()).unwrap()
}

#[test]
fn extraction_matches_hand_listing() {
    let thesaurus = parse_str(TINY).unwrap();
    assert_eq!(thesaurus.all_terms().len(), 20);
    let got: BTreeSet<(String, String, RelationLabel)> = extract_relations(&thesaurus)
        .triples
        .into_iter()
        .map(|t| (t.subject, t.object, t.label))
        .collect();
    let want: BTreeSet<_> = tiny_triples().into_iter().collect();
    assert_eq!(got, want);
}

#[test]
fn reference_sampler_output_is_frozen() {
    let reference = to_csv(&reference_sample(&tiny_triples(), &tiny_terms(), 2, 7));
    assert_eq!(reference, TINY_GOLD_SEED7, "reference output:\n{reference}");
}

#[test]
fn tiny_fixture_seed_7_matches_reference() {
    assert_eq!(tiny_build(2, 7), TINY_GOLD_SEED7);
}

#[test]
fn other_seeds_agree_with_reference() {
    for seed in [0, 1, 2, 99, u64::MAX] {
        let reference = to_csv(&reference_sample(&tiny_triples(), &tiny_terms(), 2, seed));
        assert_eq!(tiny_build(2, seed), reference, "seed {seed}");
    }
}

#[test]
fn mirrored_hierarchy_caps_narrower() {
    let thesaurus = parse_str(TINY).unwrap();
    let extraction = extract_relations(&thesaurus);
    let err = build_gold(
        &extraction.triples,
        &thesaurus.all_terms(),
        GoldOptions::new(3, 7),
    )
    .unwrap_err();
    assert!(err.to_string().contains("narrower"), "{err}");
}

#[test]
fn fifth_broader_pair_is_a_capacity_error() {
    let thesaurus = parse_str(TINY).unwrap();
    let extraction = extract_relations(&thesaurus);
    let err = build_gold(
        &extraction.triples,
        &thesaurus.all_terms(),
        GoldOptions::new(5, 7),
    )
    .unwrap_err();
    assert!(err.to_string().contains("broader"), "{err}");
}

#[test]
fn negatives_are_never_related() {
    let thesaurus = parse_str(TINY).unwrap();
    let extraction = extract_relations(&thesaurus);
    let related: HashSet<_> = tiny_triples().iter().map(|t| key(&t.0, &t.1)).collect();
    for seed in 0..50 {
        let gold = build_gold(
            &extraction.triples,
            &thesaurus.all_terms(),
            GoldOptions::new(2, seed),
        )
        .unwrap();
        for r in gold.records().iter().filter(|r| r.label == Other) {
            assert!(!related.contains(&key(&r.pair.topic_a, &r.pair.topic_b)));
        }
    }
}

#[test]
fn empty_request_is_header_only() {
    assert_eq!(tiny_build(0, 7), "topic_a,topic_b,label\n");
}

#[test]
fn triple_ordering_is_subject_object_first() {
    let a = RelationTriple::new("a", Other, "z").unwrap();
    let b = RelationTriple::new("b", Broader, "a").unwrap();
    assert!(a < b);
}
