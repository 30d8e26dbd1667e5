//! Provider-neutral chat request/response types and the gateway trait.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Temperature for evaluator and safety-judge calls.
pub const JUDGE_TEMPERATURE: f32 = 0.0;
/// Temperature for patient generation calls.
pub const PATIENT_TEMPERATURE: f32 = 0.7;
/// Default output budget for every call.
pub const DEFAULT_MAX_OUTPUT: u32 = 2048;

/// One whole-message completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f32,
    pub max_output: u32,
    /// Caller label, used for audit logging and mock matching.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(
        tag: impl Into<String>,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
        temperature: f32,
    ) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature,
            max_output: DEFAULT_MAX_OUTPUT,
            tag: tag.into(),
        }
    }

    /// Checks the request invariants: non-empty prompts, temperature in [0, 2]
    /// and a positive output budget.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(String::from("empty prompt")));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(alloc::format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output == 0 {
            return Err(GatewayError::InvalidRequest(String::from("max_output must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    pub provider: String,
    pub truncated: bool,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>, provider: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            latency_ms: 0,
            provider: provider.into(),
            truncated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("gateway timed out")]
    Timeout,
    #[error("gateway rejected credentials: {0}")]
    Auth(String),
    /// Connection resets, 5xx, 429 and similar. Retried.
    #[error("transient transport failure: {0}")]
    Transport(String),
    /// The provider refused or could not produce content. Never retried.
    #[error("provider content error: {0}")]
    Content(String),
    #[error("retry budget of {attempts} attempt(s) exhausted; last error: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// No scripted response matched (mock gateways only).
    #[error("no scripted response for request tagged {0:?}")]
    Unscripted(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Timeout | GatewayError::Transport(_))
    }
}

/// Anything that can turn a [`ChatRequest`] into text.
pub trait LlmGateway {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Completes several independent requests. Results come back in request
    /// order. The default runs them one after another; threaded gateways
    /// override it to fan out.
    fn complete_all(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for &G {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }

    fn complete_all(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        (**self).complete_all(requests)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for alloc::sync::Arc<G> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }

    fn complete_all(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        (**self).complete_all(requests)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for alloc::boxed::Box<G> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }

    fn complete_all(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        (**self).complete_all(requests)
    }
}
