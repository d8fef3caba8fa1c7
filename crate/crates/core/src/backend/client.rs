use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::Utc;

use super::exchange::exchange_id;
use super::{
    excerpt, BackendConfig, BackendError, Completer, CompletionRequest, Exchange, ExchangeStore,
    Provider, ProviderFailure,
};

/// Counting semaphore bounding concurrent provider calls.
#[derive(Debug)]
pub struct Limiter {
    capacity: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        Limiter {
            capacity: capacity.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut in_use = self.in_use.lock().expect("limiter poisoned");
        while *in_use >= self.capacity {
            in_use = self.freed.wait(in_use).expect("limiter poisoned");
        }
        *in_use += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut in_use = self.limiter.in_use.lock().expect("limiter poisoned");
        *in_use -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Exponential backoff: `base * 2^(retry - 1)`, capped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub limit: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Cached, rate-limited, retrying front for a provider.
pub struct Client {
    config: BackendConfig,
    provider: Option<Arc<dyn Provider>>,
    store: Option<Arc<ExchangeStore>>,
    limiter: Limiter,
    retry: RetryPolicy,
    provider_calls: AtomicU64,
}

impl Client {
    pub fn new(config: BackendConfig, provider: Arc<dyn Provider>) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Client {
            limiter: Limiter::new(config.max_in_flight),
            retry: RetryPolicy {
                limit: config.retry_limit,
                base_delay: config.retry_base_delay,
                max_delay: Duration::from_secs(30),
            },
            config,
            provider: Some(provider),
            store: None,
            provider_calls: AtomicU64::new(0),
        })
    }

    /// Serves only from `store`; any miss is a [`BackendError::ReplayMiss`].
    pub fn offline(config: BackendConfig, store: Arc<ExchangeStore>) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Client {
            limiter: Limiter::new(config.max_in_flight),
            retry: RetryPolicy {
                limit: 0,
                base_delay: Duration::ZERO,
                max_delay: Duration::ZERO,
            },
            config,
            provider: None,
            store: Some(store),
            provider_calls: AtomicU64::new(0),
        })
    }

    pub fn with_store(mut self, store: Arc<ExchangeStore>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn store(&self) -> Option<&Arc<ExchangeStore>> {
        self.store.as_ref()
    }

    /// Attempts made against the provider so far (cache hits excluded).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn exchange_id_for(&self, request: &CompletionRequest) -> String {
        exchange_id(
            &self.config.model_id,
            self.config.temperature,
            request.max_output_tokens,
            &request.prompt,
        )
    }

    fn call_with_retries(
        &self,
        provider: &dyn Provider,
        request: &CompletionRequest,
    ) -> Result<(String, u32), BackendError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                provider.send(request, &self.config)
            };
            let failure = match outcome {
                Ok(text) => return Ok((text, attempt)),
                Err(f) => f,
            };
            if failure.is_retryable() && attempt <= self.retry.limit {
                let delay = self.retry.delay(attempt);
                log::debug!("attempt {attempt} failed ({failure:?}); retrying in {delay:?}");
                thread::sleep(delay);
                continue;
            }
            return Err(match failure {
                ProviderFailure::Transient(message) => BackendError::Transport {
                    attempts: attempt,
                    message,
                },
                ProviderFailure::Status { status, body } => BackendError::Provider {
                    status,
                    excerpt: excerpt(&body),
                },
                ProviderFailure::Credential { var } => BackendError::Credential { var },
                ProviderFailure::Malformed(m) => BackendError::Malformed(m),
                ProviderFailure::Scripted(m) => BackendError::Scripted(m),
            });
        }
    }
}

impl Completer for Client {
    fn complete(&self, request: &CompletionRequest) -> Result<Exchange, BackendError> {
        let id = self.exchange_id_for(request);
        if let Some(hit) = self.store.as_ref().and_then(|s| s.get(&id)) {
            return Ok(hit);
        }
        let Some(provider) = self.provider.as_deref() else {
            return Err(BackendError::ReplayMiss { exchange_id: id });
        };

        let started = Instant::now();
        let timestamp = Utc::now();
        let (response, attempts) = self.call_with_retries(provider, request)?;
        let exchange = Exchange {
            exchange_id: id,
            prompt: request.prompt.clone(),
            response,
            model_id: self.config.model_id.clone(),
            timestamp,
            latency: started.elapsed().as_secs_f64(),
            attempt_count: attempts,
        };
        if let Some(store) = &self.store {
            store.append(&exchange)?;
        }
        Ok(exchange)
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }
}
