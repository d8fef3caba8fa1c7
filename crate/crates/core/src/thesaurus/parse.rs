//! Line-oriented thesaurus reader.
//!
//! Input format: a term line at column 0, followed by indented relation lines
//! `<TAG> <term>` where TAG is one of `BT`, `NT`, `USE`, `UF`, `RT`. A blank
//! line closes the entry. Lines starting with `#` at column 0 are comments.
//!
//! ```text
//! databases
//!   NT distributed databases
//!   UF data bases
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use super::ThesaurusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Bt,
    Nt,
    Use,
    Uf,
    Rt,
}

impl Tag {
    fn parse(token: &str) -> Option<Tag> {
        match token {
            "BT" => Some(Tag::Bt),
            "NT" => Some(Tag::Nt),
            "USE" => Some(Tag::Use),
            "UF" => Some(Tag::Uf),
            "RT" => Some(Tag::Rt),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Bt => "BT",
            Tag::Nt => "NT",
            Tag::Use => "USE",
            Tag::Uf => "UF",
            Tag::Rt => "RT",
        }
    }
}

/// One term block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ThesaurusEntry {
    pub term: String,
    pub broader_terms: BTreeSet<String>,
    pub narrower_terms: BTreeSet<String>,
    /// Preferred term when this entry is a non-preferred form.
    pub use_term: Option<String>,
    pub used_for: BTreeSet<String>,
    pub related: BTreeSet<String>,
}

impl ThesaurusEntry {
    pub fn new(term: impl Into<String>) -> Self {
        ThesaurusEntry {
            term: term.into(),
            ..Default::default()
        }
    }

    fn mentions(&self, term: &str) -> bool {
        self.broader_terms.contains(term)
            || self.narrower_terms.contains(term)
            || self.use_term.as_deref() == Some(term)
            || self.used_for.contains(term)
            || self.related.contains(term)
    }

    /// Every term this entry points at, across all tags.
    pub fn referenced_terms(&self) -> impl Iterator<Item = &String> {
        self.broader_terms
            .iter()
            .chain(&self.narrower_terms)
            .chain(self.use_term.iter())
            .chain(&self.used_for)
            .chain(&self.related)
    }
}

/// Non-fatal findings reported alongside a successful parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    UnknownTag {
        line: usize,
        tag: String,
    },
    /// Non-preferred terms carry only USE/UF; this one also has BT or NT.
    UseWithHierarchy {
        term: String,
    },
    /// A second USE line naming a different preferred term; the first wins.
    ConflictingUse {
        line: usize,
        term: String,
        ignored: String,
    },
    /// The same term heads more than one block; the blocks are merged.
    RepeatedEntry {
        line: usize,
        term: String,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Thesaurus {
    pub entries: BTreeMap<String, ThesaurusEntry>,
    pub warnings: Vec<ParseWarning>,
}

impl Thesaurus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<&ThesaurusEntry> {
        self.entries.get(term)
    }

    /// Entry terms plus every term mentioned in a relation line.
    pub fn all_terms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for entry in self.entries.values() {
            out.insert(entry.term.clone());
            out.extend(entry.referenced_terms().cloned());
        }
        out
    }
}

/// Trims and collapses internal whitespace runs to one space. Case is kept.
pub fn normalize_term(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_str(source: &str) -> Result<Thesaurus, ThesaurusError> {
    parse_thesaurus(source.as_bytes())
}

pub fn parse_thesaurus<R: BufRead>(reader: R) -> Result<Thesaurus, ThesaurusError> {
    let mut out = Thesaurus::default();
    // Key of the entry currently receiving relation lines.
    let mut current: Option<String> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| ThesaurusError::Io {
            line: line_no,
            source,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);

        if line.trim().is_empty() {
            current = None;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }

        if !line.starts_with([' ', '\t']) {
            let term = normalize_term(line);
            if out.entries.contains_key(&term) {
                out.warnings.push(ParseWarning::RepeatedEntry {
                    line: line_no,
                    term: term.clone(),
                });
            } else {
                out.entries
                    .insert(term.clone(), ThesaurusEntry::new(term.clone()));
            }
            current = Some(term);
            continue;
        }

        let Some(key) = current.as_ref() else {
            return Err(ThesaurusError::malformed(
                line_no,
                "relation line outside an entry block",
            ));
        };
        let content = line.trim();
        let (tag_token, rest) = match content.split_once(char::is_whitespace) {
            Some((t, r)) => (t, normalize_term(r)),
            None => (content, String::new()),
        };
        let looks_like_tag =
            !tag_token.is_empty() && tag_token.chars().all(|c| c.is_ascii_uppercase());
        if !looks_like_tag {
            return Err(ThesaurusError::malformed(line_no, "missing relation tag"));
        }
        let Some(tag) = Tag::parse(tag_token) else {
            out.warnings.push(ParseWarning::UnknownTag {
                line: line_no,
                tag: tag_token.to_string(),
            });
            continue;
        };
        if rest.is_empty() {
            return Err(ThesaurusError::malformed(
                line_no,
                format!("empty term after {}", tag.as_str()),
            ));
        }
        if &rest == key {
            return Err(ThesaurusError::malformed(
                line_no,
                format!("term `{rest}` refers to itself"),
            ));
        }

        let entry = out.entries.get_mut(key).expect("current entry exists");
        match tag {
            Tag::Bt => {
                entry.broader_terms.insert(rest);
            }
            Tag::Nt => {
                entry.narrower_terms.insert(rest);
            }
            Tag::Uf => {
                entry.used_for.insert(rest);
            }
            Tag::Rt => {
                entry.related.insert(rest);
            }
            Tag::Use => match &entry.use_term {
                None => entry.use_term = Some(rest),
                Some(existing) if *existing == rest => {}
                Some(_) => out.warnings.push(ParseWarning::ConflictingUse {
                    line: line_no,
                    term: key.clone(),
                    ignored: rest,
                }),
            },
        }
    }

    for entry in out.entries.values() {
        debug_assert!(!entry.mentions(&entry.term));
        if entry.use_term.is_some()
            && !(entry.broader_terms.is_empty() && entry.narrower_terms.is_empty())
        {
            out.warnings.push(ParseWarning::UseWithHierarchy {
                term: entry.term.clone(),
            });
        }
    }
    Ok(out)
}
