//! Prompt templates and rendering.
//!
//! The template files under `templates/` are the reference bytes (UTF-8, LF,
//! no trailing newline). Topics are substituted literally, without quoting or
//! escaping.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::thesaurus::TopicPair;

pub const TOPIC_A: &str = "[TOPIC-A]";
pub const TOPIC_B: &str = "[TOPIC-B]";
pub const PREVIOUS_RESPONSE: &str = "[PREVIOUS-RESPONSE]";

const STANDARD: &str = include_str!("../templates/standard.txt");
const COT_PHASE1: &str = include_str!("../templates/cot_phase1.txt");
const COT_PHASE2: &str = include_str!("../templates/cot_phase2.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Standard,
    CotPhase1,
    CotPhase2,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 3] = [
        TemplateKind::Standard,
        TemplateKind::CotPhase1,
        TemplateKind::CotPhase2,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Standard => "standard.txt",
            TemplateKind::CotPhase1 => "cot_phase1.txt",
            TemplateKind::CotPhase2 => "cot_phase2.txt",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::Standard => "standard",
            TemplateKind::CotPhase1 => "cot-phase1",
            TemplateKind::CotPhase2 => "cot-phase2",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{kind} template needs the previous response")]
    MissingPrevious { kind: TemplateKind },
    #[error("{kind} template takes no previous response")]
    UnexpectedPrevious { kind: TemplateKind },
    #[error("placeholder {placeholder} left in rendered {kind} prompt")]
    Unsubstituted {
        kind: TemplateKind,
        placeholder: &'static str,
    },
    #[error("{kind} template is malformed: {reason}")]
    BadTemplate { kind: TemplateKind, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    body: String,
}

impl PromptTemplate {
    /// One of the built-in templates.
    pub fn builtin(kind: TemplateKind) -> PromptTemplate {
        let body = match kind {
            TemplateKind::Standard => STANDARD,
            TemplateKind::CotPhase1 => COT_PHASE1,
            TemplateKind::CotPhase2 => COT_PHASE2,
        };
        PromptTemplate {
            kind,
            body: body.to_string(),
        }
    }

    /// A custom template body, checked for the placeholders its kind needs.
    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let bad = |reason: &str| PromptError::BadTemplate {
            kind,
            reason: reason.to_string(),
        };
        if !body.contains(TOPIC_A) || !body.contains(TOPIC_B) {
            return Err(bad("missing a topic placeholder"));
        }
        let previous = body.matches(PREVIOUS_RESPONSE).count();
        match kind {
            TemplateKind::CotPhase2 if previous != 1 => {
                return Err(bad("needs exactly one [PREVIOUS-RESPONSE]"))
            }
            TemplateKind::Standard | TemplateKind::CotPhase1 if previous != 0 => {
                return Err(bad("must not contain [PREVIOUS-RESPONSE]"))
            }
            _ => {}
        }
        Ok(PromptTemplate { kind, body })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Hex SHA-256 of the template bytes.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    pub fn placeholder_count(&self) -> usize {
        self.body.matches(TOPIC_A).count()
            + self.body.matches(TOPIC_B).count()
            + self.body.matches(PREVIOUS_RESPONSE).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub pair: TopicPair,
    pub kind: TemplateKind,
    /// Number of placeholder occurrences replaced.
    pub substitutions: usize,
}

/// Fills in a template. `previous` must be given for phase 2 and only then.
pub fn render(
    template: &PromptTemplate,
    pair: &TopicPair,
    previous: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    let kind = template.kind;
    match (kind, previous) {
        (TemplateKind::CotPhase2, None) => return Err(PromptError::MissingPrevious { kind }),
        (TemplateKind::Standard | TemplateKind::CotPhase1, Some(_)) => {
            return Err(PromptError::UnexpectedPrevious { kind })
        }
        _ => {}
    }

    // Single left-to-right pass, so substituted text is never rescanned: a
    // topic or previous response that itself contains "[TOPIC-B]" stays as-is.
    let mut text = String::with_capacity(template.body.len() + 256);
    let mut substitutions = 0;
    let mut rest = template.body.as_str();
    while let Some(pos) = rest.find('[') {
        text.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let replacement = if tail.starts_with(TOPIC_A) {
            Some((TOPIC_A.len(), pair.topic_a.as_str()))
        } else if tail.starts_with(TOPIC_B) {
            Some((TOPIC_B.len(), pair.topic_b.as_str()))
        } else if tail.starts_with(PREVIOUS_RESPONSE) {
            previous.map(|p| (PREVIOUS_RESPONSE.len(), p))
        } else {
            None
        };
        match replacement {
            Some((len, value)) => {
                text.push_str(value);
                substitutions += 1;
                rest = &tail[len..];
            }
            None => {
                text.push('[');
                rest = &tail[1..];
            }
        }
    }
    text.push_str(rest);

    if substitutions != template.placeholder_count() {
        return Err(PromptError::Unsubstituted {
            kind,
            placeholder: PREVIOUS_RESPONSE,
        });
    }

    Ok(RenderedPrompt {
        text,
        pair: pair.clone(),
        kind,
        substitutions,
    })
}

/// `(file name, checksum)` for each built-in template, for run manifests.
pub fn builtin_checksums() -> Vec<(String, String)> {
    TemplateKind::ALL
        .iter()
        .map(|k| {
            (
                k.file_name().to_string(),
                PromptTemplate::builtin(*k).checksum(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: &str, b: &str) -> TopicPair {
        TopicPair::new(a, b).unwrap()
    }

    #[test]
    fn template_checksums_are_pinned() {
        let sums: Vec<_> = builtin_checksums().into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            sums,
            [
                "4223ff5ac431c6a6e13d263a5da7c50560180fb161fc72f8d0cf2527d66ca834",
                "bb00bdbe4cc5f14d4e3852c55724f33da2f30475465c797c0f6468a89c165fdb",
                "bc4b767a58e1c3715689c3f5f14a2c55ffd350ea19a35144b9deee437c1183de",
            ]
        );
    }

    #[test]
    fn builtin_templates_satisfy_placeholder_rules() {
        for kind in TemplateKind::ALL {
            let t = PromptTemplate::builtin(kind);
            assert!(PromptTemplate::new(kind, t.body()).is_ok(), "{kind}");
            assert!(!t.body().contains('\r'));
            assert!(!t.body().ends_with('\n'));
        }
    }

    #[test]
    fn answer_lists_enumerate_six_statements() {
        for kind in [TemplateKind::Standard, TemplateKind::CotPhase2] {
            let body = PromptTemplate::builtin(kind).body().to_string();
            let section = body
                .split("determine which one of the following statements is correct:\n")
                .nth(1)
                .unwrap();
            let items: Vec<_> = section.lines().take_while(|l| !l.is_empty()).collect();
            assert_eq!(items.len(), 6, "{kind}");
            for (i, line) in items.iter().enumerate() {
                assert!(line.starts_with(&format!("{}. '", i + 1)));
            }
        }
    }

    #[test]
    fn standard_render() {
        let p = render(
            &PromptTemplate::builtin(TemplateKind::Standard),
            &pair("car", "wheel"),
            None,
        )
        .unwrap();
        assert!(p.text.contains("relationship between 'car' and 'wheel'"));
        assert!(p.text.ends_with("its number."));
        assert_eq!(
            p.substitutions,
            PromptTemplate::builtin(TemplateKind::Standard).placeholder_count()
        );
        assert!(!p.text.contains(TOPIC_A) && !p.text.contains(TOPIC_B));
    }

    #[test]
    fn phase2_starts_with_previous() {
        let p = render(
            &PromptTemplate::builtin(TemplateKind::CotPhase2),
            &pair("car", "wheel"),
            Some("X"),
        )
        .unwrap();
        assert!(p.text.starts_with("X\nGiven the previous discussion"));
    }

    #[test]
    fn previous_argument_checked() {
        let p2 = PromptTemplate::builtin(TemplateKind::CotPhase2);
        assert_eq!(
            render(&p2, &pair("a", "b"), None),
            Err(PromptError::MissingPrevious {
                kind: TemplateKind::CotPhase2
            })
        );
        let std = PromptTemplate::builtin(TemplateKind::Standard);
        assert!(matches!(
            render(&std, &pair("a", "b"), Some("x")),
            Err(PromptError::UnexpectedPrevious { .. })
        ));
    }

    #[test]
    fn apostrophes_and_brackets_kept_verbatim() {
        let t = PromptTemplate::builtin(TemplateKind::Standard);
        let p = render(&t, &pair("Moore's law", "[TOPIC-B] weird"), None).unwrap();
        assert!(p
            .text
            .contains("between 'Moore's law' and '[TOPIC-B] weird'"));
    }

    #[test]
    fn custom_template_validation() {
        assert!(PromptTemplate::new(TemplateKind::Standard, "only [TOPIC-A]").is_err());
        assert!(PromptTemplate::new(TemplateKind::CotPhase2, "[TOPIC-A] [TOPIC-B]").is_err());
        assert!(PromptTemplate::new(
            TemplateKind::CotPhase1,
            "[PREVIOUS-RESPONSE] [TOPIC-A] [TOPIC-B]"
        )
        .is_err());
        let t =
            PromptTemplate::new(TemplateKind::Standard, "[TOPIC-A]/[TOPIC-B]/[TOPIC-A]").unwrap();
        let p = render(&t, &pair("x", "y"), None).unwrap();
        assert_eq!(p.text, "x/y/x");
        assert_eq!(p.substitutions, 3);
    }

    #[test]
    fn rendering_is_pure() {
        let t = PromptTemplate::builtin(TemplateKind::CotPhase1);
        let a = render(&t, &pair("p", "q"), None).unwrap();
        let b = render(&t, &pair("p", "q"), None).unwrap();
        assert_eq!(a, b);
    }
}
