//! Table-driven provider for tests and offline runs.
//!
//! Answers are looked up by `(gold pair, orientation)`. Label answers are
//! rendered as the label's canonical statement number (`1`, `3`, `5`, `6`).
//! Discussion calls get a fixed sentence naming the topics in prompt order.
//!
//! With noise enabled, each label answer is corrupted independently of call
//! order:
//!
//! 1. `key = SHA-256(topic_a ++ 0x1F ++ topic_b ++ 0x1F ++ orientation)`, first
//!    8 bytes read as a little-endian `u64`.
//! 2. Seed ChaCha8 with `seed ^ key`.
//! 3. Draw `u: f64` in `[0, 1)`. If `u < rate`, draw `k` in `0..3` and answer
//!    with the `k`-th of the other three labels in canonical order.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::label::RelationLabel;
use crate::thesaurus::{GoldDataset, TopicPair};

use super::{BackendConfig, CompletionRequest, Orientation, Phase, Provider, ProviderFailure};

pub const DISCUSSION_PREFIX: &str = "Scripted discussion of";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedAnswer {
    Label(RelationLabel),
    /// Returned verbatim; never corrupted.
    Text(String),
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    answers: HashMap<(TopicPair, Orientation), ScriptedAnswer>,
    noise_rate: Option<f64>,
    seed: u64,
}

impl ScriptedBackend {
    pub fn new(seed: u64) -> Self {
        ScriptedBackend {
            seed,
            ..Default::default()
        }
    }

    /// Answers every gold pair correctly, and the reverse order with the
    /// inverse label.
    pub fn perfect(gold: &GoldDataset, seed: u64) -> Self {
        let mut backend = ScriptedBackend::new(seed);
        for r in gold.records() {
            backend.set(
                r.pair.clone(),
                Orientation::Forward,
                ScriptedAnswer::Label(r.label),
            );
            backend.set(
                r.pair.clone(),
                Orientation::Reverse,
                ScriptedAnswer::Label(r.label.inverse()),
            );
        }
        backend
    }

    pub fn with_answer(
        mut self,
        pair: TopicPair,
        orientation: Orientation,
        answer: ScriptedAnswer,
    ) -> Self {
        self.set(pair, orientation, answer);
        self
    }

    pub fn set(&mut self, pair: TopicPair, orientation: Orientation, answer: ScriptedAnswer) {
        self.answers.insert((pair, orientation), answer);
    }

    /// Corrupt label answers with probability `rate`.
    pub fn with_noise(mut self, rate: f64) -> Self {
        self.noise_rate = Some(rate);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The label actually answered for a key, after noise.
    pub fn answered_label(
        &self,
        pair: &TopicPair,
        orientation: Orientation,
    ) -> Option<RelationLabel> {
        match self.answers.get(&(pair.clone(), orientation))? {
            ScriptedAnswer::Label(l) => Some(self.apply_noise(pair, orientation, *l)),
            ScriptedAnswer::Text(_) => None,
        }
    }

    fn apply_noise(
        &self,
        pair: &TopicPair,
        orientation: Orientation,
        label: RelationLabel,
    ) -> RelationLabel {
        let Some(rate) = self.noise_rate else {
            return label;
        };
        match corruption_index(self.seed, pair, orientation, rate) {
            Some(k) => other_labels(label)[k],
            None => label,
        }
    }

    pub fn respond(&self, request: &CompletionRequest) -> Result<String, ProviderFailure> {
        let ctx = request
            .context
            .as_ref()
            .ok_or_else(|| ProviderFailure::Scripted("request carries no pair context".into()))?;
        let (first, second) = match ctx.orientation {
            Orientation::Forward => (&ctx.pair.topic_a, &ctx.pair.topic_b),
            Orientation::Reverse => (&ctx.pair.topic_b, &ctx.pair.topic_a),
        };
        if ctx.phase == Phase::Discussion {
            return Ok(format!("{DISCUSSION_PREFIX} '{first}' and '{second}'."));
        }
        match self.answers.get(&(ctx.pair.clone(), ctx.orientation)) {
            Some(ScriptedAnswer::Text(t)) => Ok(t.clone()),
            Some(ScriptedAnswer::Label(l)) => {
                let label = self.apply_noise(&ctx.pair, ctx.orientation, *l);
                Ok(label.canonical_statement().to_string())
            }
            None => Err(ProviderFailure::Scripted(format!(
                "no answer for {} ({})",
                ctx.pair.describe(),
                ctx.orientation
            ))),
        }
    }
}

fn other_labels(label: RelationLabel) -> Vec<RelationLabel> {
    RelationLabel::ALL
        .into_iter()
        .filter(|l| *l != label)
        .collect()
}

/// `Some(k)` when the draw for this key falls under `rate`: the index into
/// the other three labels. See the module docs for the exact procedure.
fn corruption_index(
    seed: u64,
    pair: &TopicPair,
    orientation: Orientation,
    rate: f64,
) -> Option<usize> {
    let mut hasher = Sha256::new();
    hasher.update(pair.topic_a.as_bytes());
    hasher.update([0x1f]);
    hasher.update(pair.topic_b.as_bytes());
    hasher.update([0x1f]);
    hasher.update(orientation.to_string().as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 8];
    key.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(key));
    let u: f64 = rng.random();
    (u < rate).then(|| rng.random_range(0..3))
}

impl Provider for ScriptedBackend {
    fn send(
        &self,
        request: &CompletionRequest,
        _config: &BackendConfig,
    ) -> Result<String, ProviderFailure> {
        self.respond(request)
    }
}
