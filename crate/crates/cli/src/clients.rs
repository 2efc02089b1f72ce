//! LLM clients built from `[[llm.variants]]`.

use std::sync::Arc;
use std::time::Duration;

use nadet::llm::{CompletionRequest, LlmClient};
use nadet::llm_detector::LlmDetectorVariant;
use nadet::ClientError;
use serde_json::json;

use crate::config::{config_error, Config, LlmVariantConfig, Provider};

/// Client for an OpenAI-compatible chat completions endpoint.
pub struct HttpLlmClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
    max_retries: usize,
}

impl HttpLlmClient {
    fn once(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ClientError::Timeout(0),
                other => ClientError::Request(other.to_string()),
            })?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Request(format!("unreadable response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Request(format!("no completion in response: {value}")))
    }
}

impl LlmClient for HttpLlmClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        let mut last = ClientError::Exhausted;
        for attempt in 0..=self.max_retries {
            match self.once(request) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("{} attempt {}: {e}", self.model, attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

/// Client that always returns the configured text.
pub struct StaticLlmClient {
    name: String,
    output: String,
}

impl LlmClient for StaticLlmClient {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _request: &CompletionRequest) -> Result<String, ClientError> {
        Ok(self.output.clone())
    }
}

/// Build the client for a variant. Missing credentials are a configuration error.
pub fn build_client(variant: &LlmVariantConfig) -> anyhow::Result<Arc<dyn LlmClient>> {
    match variant.provider {
        Provider::Static => Ok(Arc::new(StaticLlmClient {
            name: format!("static:{}", variant.id),
            output: variant.output.clone().unwrap_or_default(),
        })),
        Provider::Openai => {
            let api_key = std::env::var(&variant.api_key_env).ok().filter(|k| !k.trim().is_empty()).ok_or_else(|| {
                config_error(format!(
                    "missing credentials for LLM variant '{}': set the {} environment variable \
                     (credentials are read from the environment only, never from the config file)",
                    variant.id, variant.api_key_env
                ))
            })?;
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(variant.timeout_secs)))
                .build()
                .into();
            Ok(Arc::new(HttpLlmClient {
                agent,
                endpoint: variant.endpoint.clone(),
                model: variant.model.clone(),
                api_key,
                max_retries: variant.max_retries,
            }))
        }
    }
}

pub fn detector_variant(config: &Config, id: &str) -> anyhow::Result<LlmDetectorVariant> {
    let v = config.variant(id)?;
    Ok(LlmDetectorVariant::new(&v.id, build_client(v)?, v.mode))
}

/// The variant named by `requested`, or the only/first configured one.
pub fn pick_variant<'a>(config: &'a Config, requested: Option<&str>) -> anyhow::Result<&'a LlmVariantConfig> {
    match requested {
        Some(id) => config.variant(id),
        None => config
            .llm
            .variants
            .first()
            .ok_or_else(|| config_error("no LLM variants configured: add an [[llm.variants]] table")),
    }
}
