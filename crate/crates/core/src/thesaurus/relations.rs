//! Turning thesaurus tags into labelled, ordered triples.

use std::collections::{BTreeMap, BTreeSet};

use crate::label::RelationLabel;

use super::parse::{Tag, Thesaurus};

/// `subject label object`, e.g. `(databases, broader, distributed databases)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationTriple {
    pub subject: String,
    pub object: String,
    pub label: RelationLabel,
}

impl RelationTriple {
    /// `None` when subject and object coincide.
    pub fn new(
        subject: impl Into<String>,
        label: RelationLabel,
        object: impl Into<String>,
    ) -> Option<Self> {
        let subject = subject.into();
        let object = object.into();
        (subject != object).then_some(RelationTriple {
            subject,
            object,
            label,
        })
    }

    pub fn unordered(&self) -> (String, String) {
        unordered_key(&self.subject, &self.object)
    }
}

pub(crate) fn unordered_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// A tag whose counterpart is missing on the other entry, e.g. `A BT B`
/// without `B NT A`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReciprocityIssue {
    pub term: String,
    pub tag: Tag,
    pub target: String,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub triples: BTreeSet<RelationTriple>,
    pub reciprocity_issues: Vec<ReciprocityIssue>,
}

impl Extraction {
    pub fn count(&self, label: RelationLabel) -> usize {
        self.triples.iter().filter(|t| t.label == label).count()
    }
}

/// BT emits `(A, narrower, B)`, NT emits `(A, broader, B)`. USE and UF emit
/// one same-as triple per unordered pair, oriented non-preferred → preferred.
/// RT emits nothing.
pub fn extract_relations(thesaurus: &Thesaurus) -> Extraction {
    let mut triples = BTreeSet::new();
    let mut same_as: BTreeMap<(String, String), BTreeSet<(String, String)>> = BTreeMap::new();
    let mut issues = Vec::new();

    let has = |term: &str, tag: Tag, target: &str| -> bool {
        thesaurus.get(term).is_some_and(|e| match tag {
            Tag::Bt => e.broader_terms.contains(target),
            Tag::Nt => e.narrower_terms.contains(target),
            Tag::Use => e.use_term.as_deref() == Some(target),
            Tag::Uf => e.used_for.contains(target),
            Tag::Rt => e.related.contains(target),
        })
    };

    for entry in thesaurus.entries.values() {
        let a = entry.term.as_str();
        for b in &entry.broader_terms {
            triples.extend(RelationTriple::new(a, RelationLabel::Narrower, b));
            if !has(b, Tag::Nt, a) {
                issues.push(ReciprocityIssue {
                    term: a.into(),
                    tag: Tag::Bt,
                    target: b.clone(),
                });
            }
        }
        for b in &entry.narrower_terms {
            triples.extend(RelationTriple::new(a, RelationLabel::Broader, b));
            if !has(b, Tag::Bt, a) {
                issues.push(ReciprocityIssue {
                    term: a.into(),
                    tag: Tag::Nt,
                    target: b.clone(),
                });
            }
        }
        if let Some(preferred) = &entry.use_term {
            same_as
                .entry(unordered_key(a, preferred))
                .or_default()
                .insert((a.to_string(), preferred.clone()));
            if !has(preferred, Tag::Uf, a) {
                issues.push(ReciprocityIssue {
                    term: a.into(),
                    tag: Tag::Use,
                    target: preferred.clone(),
                });
            }
        }
        for alt in &entry.used_for {
            same_as
                .entry(unordered_key(a, alt))
                .or_default()
                .insert((alt.clone(), a.to_string()));
            if !has(alt, Tag::Use, a) {
                issues.push(ReciprocityIssue {
                    term: a.into(),
                    tag: Tag::Uf,
                    target: alt.clone(),
                });
            }
        }
    }

    for orientations in same_as.into_values() {
        // Consistent input yields one orientation; otherwise the smallest wins.
        let (s, o) = orientations.into_iter().next().expect("non-empty");
        triples.extend(RelationTriple::new(s, RelationLabel::SameAs, o));
    }

    Extraction {
        triples,
        reciprocity_issues: issues,
    }
}
