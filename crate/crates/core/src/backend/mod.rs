//! Completion backends.
//!
//! A [`Provider`] turns one prompt into response text (over HTTP, or from a
//! script). A [`Client`] wraps a provider with the exchange log, retries and
//! the in-flight limit, and hands out [`Exchange`] records through the
//! [`Completer`] trait that the strategies consume.

mod client;
mod config;
mod exchange;
mod http;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::thesaurus::TopicPair;

pub use client::{Client, Limiter, RetryPolicy};
pub use config::{credential_var, BackendConfig};
pub use exchange::{exchange_id, replay, Exchange, ExchangeStore};
pub use http::{HttpProvider, RequestShape};
pub use scripted::{ScriptedAnswer, ScriptedBackend, DISCUSSION_PREFIX};

/// Which topic order a branch asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// `(topic A, topic B)` as in the gold record.
    Forward,
    /// `(topic B, topic A)`.
    Reverse,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Forward => "forward",
            Orientation::Reverse => "reverse",
        })
    }
}

/// Whether a call asks for the numbered answer or for the chain-of-thought
/// discussion that precedes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Answer,
    Discussion,
}

/// Where a prompt came from. Only scripted providers look at this; it takes
/// no part in the exchange id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestContext {
    /// The gold pair, in gold order regardless of orientation.
    pub pair: TopicPair,
    pub orientation: Orientation,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub context: Option<RequestContext>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, max_output_tokens: u32) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_output_tokens,
            context: None,
        }
    }

    pub fn with_context(mut self, context: RequestContext) -> Self {
        self.context = Some(context);
        self
    }
}

/// A failed attempt, as seen by the retry loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderFailure {
    /// Timeouts and connection failures.
    Transient(String),
    Status {
        status: u16,
        body: String,
    },
    Credential {
        var: String,
    },
    Malformed(String),
    Scripted(String),
}

impl ProviderFailure {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderFailure::Transient(_) => true,
            ProviderFailure::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Provider: Send + Sync {
    fn send(
        &self,
        request: &CompletionRequest,
        config: &BackendConfig,
    ) -> Result<String, ProviderFailure>;
}

/// Anything that can produce an [`Exchange`] for a request.
pub trait Completer: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Exchange, BackendError>;

    fn model_id(&self) -> &str;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("credentials missing or rejected; set {var}")]
    Credential { var: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {excerpt}")]
    Provider { status: u16, excerpt: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("replay miss: exchange {exchange_id} is not in the log")]
    ReplayMiss { exchange_id: String },
    #[error("scripted backend: {0}")]
    Scripted(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("exchange log {path}: {message}")]
    Store { path: String, message: String },
}

pub(crate) fn excerpt(body: &str) -> String {
    const LIMIT: usize = 200;
    match body.char_indices().nth(LIMIT) {
        Some((idx, _)) => format!("{}...", &body[..idx]),
        None => body.to_string(),
    }
}
