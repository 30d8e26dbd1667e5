//! OpenAI-compatible chat-completions client.

use std::time::{Duration, Instant};

use serde_json::{json, Value};
use vpsim_core::{ChatRequest, ChatResponse, GatewayError, LlmGateway};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpGatewayConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Header carrying the key. `Authorization` values get a `Bearer ` prefix.
    pub auth_header: String,
    pub timeout: Duration,
}

pub struct HttpGateway {
    agent: ureq::Agent,
    config: HttpGatewayConfig,
}

impl HttpGateway {
    pub fn new(config: HttpGatewayConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, config }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        })
    }
}

/// Maps an HTTP status to a gateway error; `None` means success.
pub(crate) fn classify_status(status: u16, body: &str) -> Option<GatewayError> {
    let snippet: String = body.chars().take(200).collect();
    match status {
        200..=299 => None,
        401 | 403 => Some(GatewayError::Auth(format!("HTTP {status}"))),
        408 => Some(GatewayError::Timeout),
        429 | 500..=599 => Some(GatewayError::Transport(format!("HTTP {status}: {snippet}"))),
        _ => Some(GatewayError::Content(format!("HTTP {status}: {snippet}"))),
    }
}

/// Pulls the message text and truncation flag from a completion body.
pub(crate) fn parse_completion(body: &str) -> Result<(String, bool), GatewayError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::Content(format!("response is not JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Content("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Content("response has no message content".into()))?;
    let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
    Ok((text.to_owned(), truncated))
}

impl LlmGateway for HttpGateway {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let started = Instant::now();
        let mut call = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            let value = if self.config.auth_header.eq_ignore_ascii_case("authorization") {
                format!("Bearer {key}")
            } else {
                key.clone()
            };
            call = call.header(self.config.auth_header.as_str(), value);
        }
        let mut response = call.send_json(self.request_body(request)).map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout,
            other => GatewayError::Transport(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(format!("reading body: {e}")))?;
        if let Some(err) = classify_status(status, &body) {
            return Err(err);
        }
        let (text, truncated) = parse_completion(&body)?;
        Ok(ChatResponse {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            provider: format!("openai-compatible:{}", self.config.model),
            truncated,
        })
    }
}
