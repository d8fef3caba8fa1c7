use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub provider_id: String,
    pub model_id: String,
    pub endpoint_url: String,
    pub temperature: f64,
    /// Token budget for answer calls.
    pub max_output_tokens: u32,
    /// Token budget for the chain-of-thought discussion call.
    pub discussion_max_output_tokens: u32,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
    pub max_in_flight: usize,
    pub retry_limit: u32,
    #[serde(with = "duration_secs")]
    pub retry_base_delay: Duration,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            provider_id: "openai".into(),
            model_id: String::new(),
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            discussion_max_output_tokens: 1024,
            request_timeout: Duration::from_secs(120),
            max_in_flight: 4,
            retry_limit: 3,
            retry_base_delay: Duration::from_millis(500),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let fail = |m: &str| Err(BackendError::Config(m.to_string()));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return fail("temperature must be a finite number >= 0");
        }
        if self.max_in_flight == 0 {
            return fail("max_in_flight must be at least 1");
        }
        if self.max_output_tokens == 0 || self.discussion_max_output_tokens == 0 {
            return fail("token budgets must be positive");
        }
        if self.model_id.trim().is_empty() {
            return fail("model_id is empty");
        }
        if self.provider_id.trim().is_empty() {
            return fail("provider_id is empty");
        }
        Ok(())
    }

    pub fn credential_var(&self) -> String {
        credential_var(&self.provider_id)
    }
}

/// `ONTOREL_<PROVIDER>_API_KEY`, provider upper-cased with other characters
/// mapped to `_`.
pub fn credential_var(provider_id: &str) -> String {
    let provider: String = provider_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("ONTOREL_{provider}_API_KEY")
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn credential_var_names() {
        assert_eq!(credential_var("openai"), "ONTOREL_OPENAI_API_KEY");
        assert_eq!(
            credential_var("my-local.box"),
            "ONTOREL_MY_LOCAL_BOX_API_KEY"
        );
    }

    #[test]
    fn defaults() {
        let c = BackendConfig::default();
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.max_output_tokens, 512);
        assert_eq!(c.discussion_max_output_tokens, 1024);
    }

    #[test]
    fn validation() {
        let ok = BackendConfig {
            model_id: "m".into(),
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        for bad in [
            BackendConfig {
                temperature: -0.1,
                ..ok.clone()
            },
            BackendConfig {
                temperature: f64::NAN,
                ..ok.clone()
            },
            BackendConfig {
                max_in_flight: 0,
                ..ok.clone()
            },
            BackendConfig {
                max_output_tokens: 0,
                ..ok.clone()
            },
            BackendConfig {
                model_id: " ".into(),
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(BackendError::Config(_))));
        }
    }

    #[test]
    fn serde_round_trip() {
        let c = BackendConfig {
            model_id: "m".into(),
            request_timeout: Duration::from_millis(1500),
            ..Default::default()
        };
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"request_timeout\":1.5"));
        let back: BackendConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
