//! Reading a relation label out of a model's answer text.
//!
//! Strict mode only accepts an answer that starts with a statement number.
//! Lenient mode falls back to scanning the whole text: stand-alone digits 1–6
//! are considered first, and the statement phrases (`is-broader-than`, ...)
//! only when no digit is present. Phrases are read as if topic A came first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{PredictionOutcome, RelationLabel, StatementNumber};

pub const NO_ANSWER: &str = "no-answer";
pub const CONFLICT: &str = "conflict";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseMode {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnConflict {
    FirstMatch,
    Invalid,
}

/// Fixed for a whole run and recorded in its report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParsePolicy {
    pub mode: ParseMode,
    pub on_conflict: OnConflict,
}

impl Default for ParsePolicy {
    fn default() -> Self {
        ParsePolicy {
            mode: ParseMode::Lenient,
            on_conflict: OnConflict::Invalid,
        }
    }
}

impl fmt::Display for ParsePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            ParseMode::Strict => "strict",
            ParseMode::Lenient => "lenient",
        };
        let conflict = match self.on_conflict {
            OnConflict::FirstMatch => "first-match",
            OnConflict::Invalid => "invalid",
        };
        write!(f, "{mode}+{conflict}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error(
    "unknown parse policy `{0}` (expected strict|lenient, optionally +first-match or +invalid)"
)]
pub struct PolicyError(String);

impl FromStr for ParsePolicy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (mode, conflict) = s.split_once('+').unwrap_or((s, "invalid"));
        let mode = match mode {
            "strict" => ParseMode::Strict,
            "lenient" => ParseMode::Lenient,
            _ => return Err(PolicyError(s.to_string())),
        };
        let on_conflict = match conflict {
            "first-match" => OnConflict::FirstMatch,
            "invalid" => OnConflict::Invalid,
            _ => return Err(PolicyError(s.to_string())),
        };
        Ok(ParsePolicy { mode, on_conflict })
    }
}

impl Serialize for ParsePolicy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParsePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const PHRASES: [(&str, RelationLabel); 4] = [
    ("is-broader-than", RelationLabel::Broader),
    ("is-narrower-than", RelationLabel::Narrower),
    ("is-same-as-than", RelationLabel::SameAs),
    ("is-other-than", RelationLabel::Other),
];

pub fn parse_response(text: &str, policy: ParsePolicy) -> PredictionOutcome {
    if let Some(n) = leading_statement(text) {
        return PredictionOutcome::Label(n.label());
    }
    if policy.mode == ParseMode::Strict {
        return PredictionOutcome::Invalid(NO_ANSWER.to_string());
    }

    let digits = digit_candidates(text);
    let candidates = if digits.is_empty() {
        phrase_candidates(text)
    } else {
        digits
    };
    resolve(candidates, policy.on_conflict)
}

/// Byte-lossy entry point for raw transport payloads.
pub fn parse_response_bytes(bytes: &[u8], policy: ParsePolicy) -> PredictionOutcome {
    parse_response(&String::from_utf8_lossy(bytes), policy)
}

/// `5`, `5.`, `5)` or `5 ...` at the start of the (left-trimmed) text.
pub fn leading_statement(text: &str) -> Option<StatementNumber> {
    let mut chars = text.trim_start().chars();
    let first = chars.next()?;
    let n = first.to_digit(10)?;
    match chars.next() {
        None => {}
        Some('.') | Some(')') => {}
        Some(c) if c.is_whitespace() => {}
        Some(_) => return None,
    }
    StatementNumber::new(i64::from(n)).ok()
}

fn digit_candidates(text: &str) -> Vec<(usize, RelationLabel)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        // Maximal run of digits and separators, e.g. "2.0" or "1,000".
        let start = i;
        let mut end = i;
        while end < bytes.len()
            && (bytes[end].is_ascii_digit() || matches!(bytes[end], b'.' | b','))
        {
            end += 1;
        }
        let mut core_end = end;
        while core_end > start && matches!(bytes[core_end - 1], b'.' | b',') {
            core_end -= 1;
        }
        let before_ok = start == 0 || !bytes[start - 1].is_ascii_alphabetic();
        let after_ok = core_end >= bytes.len() || !bytes[core_end].is_ascii_alphabetic();
        if core_end - start == 1 && before_ok && after_ok {
            if let Ok(n) = StatementNumber::new(i64::from(bytes[start] - b'0')) {
                out.push((start, n.label()));
            }
        }
        i = end.max(i + 1);
    }
    out
}

fn phrase_candidates(text: &str) -> Vec<(usize, RelationLabel)> {
    let lower = text.to_ascii_lowercase();
    let mut out = Vec::new();
    for (phrase, label) in PHRASES {
        out.extend(lower.match_indices(phrase).map(|(pos, _)| (pos, label)));
    }
    out.sort_by_key(|(pos, _)| *pos);
    out
}

fn resolve(candidates: Vec<(usize, RelationLabel)>, on_conflict: OnConflict) -> PredictionOutcome {
    let Some(&(_, first)) = candidates.first() else {
        return PredictionOutcome::Invalid(NO_ANSWER.to_string());
    };
    let distinct = candidates.iter().any(|(_, l)| *l != first);
    match (distinct, on_conflict) {
        (false, _) | (true, OnConflict::FirstMatch) => PredictionOutcome::Label(first),
        (true, OnConflict::Invalid) => PredictionOutcome::Invalid(CONFLICT.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use RelationLabel::*;

    fn lenient() -> ParsePolicy {
        ParsePolicy::default()
    }

    fn strict() -> ParsePolicy {
        ParsePolicy {
            mode: ParseMode::Strict,
            on_conflict: OnConflict::Invalid,
        }
    }

    fn first_match() -> ParsePolicy {
        ParsePolicy {
            mode: ParseMode::Lenient,
            on_conflict: OnConflict::FirstMatch,
        }
    }

    #[test]
    fn examples() {
        assert_eq!(
            parse_response("1. 'car' is-broader-than 'wheel'", lenient()),
            PredictionOutcome::Label(Broader)
        );
        assert_eq!(
            parse_response("5", lenient()),
            PredictionOutcome::Label(SameAs)
        );
        assert_eq!(
            parse_response("I am not able to decide.", lenient()),
            PredictionOutcome::Invalid(NO_ANSWER.into())
        );
        assert_eq!(
            parse_response("Both 1 and 6 could apply", lenient()),
            PredictionOutcome::Invalid(CONFLICT.into())
        );
    }

    #[test]
    fn conflict_candidate_set_matches_scanner() {
        let labels: std::collections::BTreeSet<_> = digit_candidates("Both 1 and 6 could apply")
            .into_iter()
            .map(|(_, l)| l)
            .collect();
        assert_eq!(labels, [Broader, Other].into_iter().collect());
        assert_eq!(
            parse_response("Both 1 and 6 could apply", first_match()),
            PredictionOutcome::Label(Broader)
        );
    }

    #[test]
    fn strict_forms() {
        for (text, label) in [
            ("3", Narrower),
            ("  4)", Narrower),
            ("\n2. 'wheel' is-narrower-than 'car'", Broader),
            ("6 'a' is-other-than 'b'", Other),
        ] {
            assert_eq!(
                parse_response(text, strict()),
                PredictionOutcome::Label(label),
                "{text}"
            );
        }
        for text in ["7", "0", "10", "The answer is 1", "1st", "one", ""] {
            assert!(parse_response(text, strict()).is_invalid(), "{text}");
        }
    }

    #[test]
    fn lenient_scans_digits_then_phrases() {
        assert_eq!(
            parse_response("The correct statement is 3.", lenient()),
            PredictionOutcome::Label(Narrower)
        );
        assert_eq!(
            parse_response("**5**", lenient()),
            PredictionOutcome::Label(SameAs)
        );
        assert_eq!(
            parse_response("Answer: (1) and also 2", lenient()),
            PredictionOutcome::Label(Broader)
        );
        assert_eq!(
            parse_response("'Car' IS-BROADER-THAN \"wheel\"", lenient()),
            PredictionOutcome::Label(Broader)
        );
        assert_eq!(
            parse_response("statement: a is-same-as-than b", lenient()),
            PredictionOutcome::Label(SameAs)
        );
        // A digit settles it even if a phrase elsewhere reads the other way.
        assert_eq!(
            parse_response("Statement 2: 'wheel' is-narrower-than 'car'", lenient()),
            PredictionOutcome::Label(Broader)
        );
        assert!(parse_response("a is-broader-than b but is-other-than c", lenient()).is_invalid());
    }

    #[test]
    fn numbers_in_words_ignored() {
        for text in [
            "5G networks",
            "IPv6 is-other-than IPv4",
            "Web 2.0 is-other-than HTML",
        ] {
            let out = parse_response(text, lenient());
            assert!(
                !matches!(
                    out,
                    PredictionOutcome::Label(SameAs) | PredictionOutcome::Label(Narrower)
                ),
                "{text}: {out:?}"
            );
        }
        assert_eq!(
            parse_response("IPv6 is-other-than IPv4", lenient()),
            PredictionOutcome::Label(Other)
        );
        assert!(parse_response("7 8 9 0 10 66", lenient()).is_invalid());
    }

    #[test]
    fn policy_tokens() {
        assert_eq!("lenient".parse::<ParsePolicy>().unwrap(), lenient());
        assert_eq!("strict+invalid".parse::<ParsePolicy>().unwrap(), strict());
        assert_eq!(
            "lenient+first-match".parse::<ParsePolicy>().unwrap(),
            first_match()
        );
        assert!("loose".parse::<ParsePolicy>().is_err());
        assert!("strict+maybe".parse::<ParsePolicy>().is_err());
        for p in [lenient(), strict(), first_match()] {
            assert_eq!(p.to_string().parse::<ParsePolicy>().unwrap(), p);
        }
    }

    proptest! {
        #[test]
        fn never_panics_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_response_bytes(&bytes, lenient());
            let _ = parse_response_bytes(&bytes, strict());
        }

        #[test]
        fn never_panics_on_text(text in "\\PC{0,200}") {
            let _ = parse_response(&text, first_match());
        }

        #[test]
        fn strict_acceptance_implies_lenient_agreement(text in "[ \\n]{0,2}[0-9][.) ]?[ a-z'.-]{0,40}") {
            if let PredictionOutcome::Label(l) = parse_response(&text, strict()) {
                prop_assert_eq!(parse_response(&text, lenient()), PredictionOutcome::Label(l));
                prop_assert_eq!(parse_response(&text, first_match()), PredictionOutcome::Label(l));
            }
        }

        #[test]
        fn out_of_range_digits_never_label(text in "[0789 ,.]{0,30}") {
            prop_assert!(parse_response(&text, lenient()).is_invalid());
            prop_assert!(parse_response(&text, strict()).is_invalid());
        }
    }
}
