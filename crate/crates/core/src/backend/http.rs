//! OpenAI-style chat-completion adapter.

use serde_json::{json, Value};

use super::{BackendConfig, BackendError, CompletionRequest, Provider, ProviderFailure};

/// Per-provider variations of the request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestShape {
    /// Bearer auth, `max_tokens`.
    OpenAi,
    /// Local servers (llama.cpp, KoboldCpp, vLLM, ...): no auth header.
    Local,
}

impl RequestShape {
    pub fn for_provider(provider_id: &str) -> RequestShape {
        match provider_id {
            "local" | "kobold" | "llamacpp" | "vllm" | "ollama" => RequestShape::Local,
            _ => RequestShape::OpenAi,
        }
    }

    pub fn body(self, config: &BackendConfig, request: &CompletionRequest) -> Value {
        json!({
            "model": config.model_id,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": config.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

pub struct HttpProvider {
    http: reqwest::blocking::Client,
    shape: RequestShape,
    api_key: Option<String>,
    credential_var: String,
}

impl HttpProvider {
    /// Reads the API key from `ONTOREL_<PROVIDER>_API_KEY` unless the
    /// provider is a local server.
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let shape = RequestShape::for_provider(&config.provider_id);
        let credential_var = config.credential_var();
        let api_key = match shape {
            RequestShape::Local => std::env::var(&credential_var).ok(),
            RequestShape::OpenAi => match std::env::var(&credential_var) {
                Ok(k) if !k.trim().is_empty() => Some(k),
                _ => {
                    return Err(BackendError::Credential {
                        var: credential_var,
                    })
                }
            },
        };
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: &BackendConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpProvider {
            http,
            shape: RequestShape::for_provider(&config.provider_id),
            api_key,
            credential_var: config.credential_var(),
        })
    }
}

impl Provider for HttpProvider {
    fn send(
        &self,
        request: &CompletionRequest,
        config: &BackendConfig,
    ) -> Result<String, ProviderFailure> {
        let mut builder = self
            .http
            .post(&config.endpoint_url)
            .json(&self.shape.body(config, request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                ProviderFailure::Transient(e.to_string())
            } else {
                ProviderFailure::Malformed(e.to_string())
            }
        })?;

        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| ProviderFailure::Transient(e.to_string()))?;
        if status == 401 || status == 403 {
            return Err(ProviderFailure::Credential {
                var: self.credential_var.clone(),
            });
        }
        if !(200..300).contains(&status) {
            return Err(ProviderFailure::Status { status, body });
        }
        first_choice_content(&body)
    }
}

/// `choices[0].message.content` of a chat-completion response body.
pub(crate) fn first_choice_content(body: &str) -> Result<String, ProviderFailure> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| ProviderFailure::Malformed(format!("response is not JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderFailure::Malformed("no choices[0].message.content".into()))
}
