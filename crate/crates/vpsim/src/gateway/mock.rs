//! Deterministic scripted gateway.
//!
//! A policy is an ordered list of entries. The first entry whose matcher
//! accepts a request answers it; each entry plays its replies in order and
//! then keeps repeating the last one. Requests nothing matches get the
//! policy default: a fixed text, or a failure.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use vpsim_core::{ChatRequest, ChatResponse, GatewayError, LlmGateway};

pub const MOCK_PROVIDER: &str = "scripted-mock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Request tag starts with this prefix (`"eval"` matches `"eval.nursing_professor"`).
    Tag(String),
    /// System or user prompt contains this text.
    Contains(String),
}

impl Matcher {
    pub fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Tag(prefix) => request.tag.starts_with(prefix.as_str()),
            Matcher::Contains(needle) => {
                request.user_prompt.contains(needle.as_str())
                    || request.system_prompt.contains(needle.as_str())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailKind {
    Transient,
    Timeout,
    Auth,
    Content,
}

impl FailKind {
    fn error(self) -> GatewayError {
        match self {
            FailKind::Transient => GatewayError::Transport("scripted transient failure".into()),
            FailKind::Timeout => GatewayError::Timeout,
            FailKind::Auth => GatewayError::Auth("scripted auth failure".into()),
            FailKind::Content => GatewayError::Content("scripted content refusal".into()),
        }
    }
}

/// A reply: `"text"`, `{"text": "..."}` or `{"fail": "transient"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Plain(String),
    Text { text: String },
    Fail { fail: FailKind },
}

impl MockReply {
    fn answer(&self) -> Result<String, GatewayError> {
        match self {
            MockReply::Plain(t) | MockReply::Text { text: t } => Ok(t.clone()),
            MockReply::Fail { fail } => Err(fail.error()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub replies: Vec<MockReply>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockPolicy {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
    /// Reply for unmatched requests; `None` (or `"fail"` in files) fails them.
    #[serde(default, with = "default_reply")]
    pub default: Option<String>,
}

mod default_reply {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) => s.serialize_str(t),
            None => s.serialize_str("fail"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Obj { text: String },
        }
        Ok(match Option::<Raw>::deserialize(d)? {
            None => None,
            Some(Raw::Text(t)) if t == "fail" => None,
            Some(Raw::Text(t)) | Some(Raw::Obj { text: t }) => Some(t),
        })
    }
}

impl MockPolicy {
    pub fn new() -> Self {
        Self { entries: Vec::new(), default: None }
    }

    pub fn on_tag(mut self, prefix: &str, replies: &[&str]) -> Self {
        self.entries.push(MockEntry {
            matcher: Matcher::Tag(prefix.into()),
            replies: replies.iter().map(|r| MockReply::Plain(r.to_string())).collect(),
        });
        self
    }

    pub fn on_contains(mut self, needle: &str, replies: &[&str]) -> Self {
        self.entries.push(MockEntry {
            matcher: Matcher::Contains(needle.into()),
            replies: replies.iter().map(|r| MockReply::Plain(r.to_string())).collect(),
        });
        self
    }

    pub fn entry(mut self, matcher: Matcher, replies: Vec<MockReply>) -> Self {
        self.entries.push(MockEntry { matcher, replies });
        self
    }

    pub fn with_default(mut self, text: &str) -> Self {
        self.default = Some(text.into());
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading mock script {}: {e}", path.display()))?;
        Self::from_json_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing mock script {}: {e}", path.display()))
    }
}

impl Default for MockPolicy {
    fn default() -> Self {
        Self::new()
    }
}

struct MockState {
    cursors: Vec<usize>,
    log: Vec<ChatRequest>,
}

pub struct ScriptedMock {
    policy: MockPolicy,
    state: Mutex<MockState>,
}

impl ScriptedMock {
    pub fn new(policy: MockPolicy) -> Self {
        let cursors = vec![0; policy.entries.len()];
        Self { policy, state: Mutex::new(MockState { cursors, log: Vec::new() }) }
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.lock().log.clone()
    }

    pub fn calls_with_tag(&self, prefix: &str) -> usize {
        self.lock().log.iter().filter(|r| r.tag.starts_with(prefix)).count()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MockState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl LlmGateway for ScriptedMock {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let mut state = self.lock();
        state.log.push(request.clone());
        let hit = self
            .policy
            .entries
            .iter()
            .position(|e| !e.replies.is_empty() && e.matcher.matches(request));
        let text = match hit {
            Some(i) => {
                let entry = &self.policy.entries[i];
                let at = state.cursors[i].min(entry.replies.len() - 1);
                state.cursors[i] += 1;
                entry.replies[at].answer()?
            }
            None => match &self.policy.default {
                Some(t) => t.clone(),
                None => return Err(GatewayError::Unscripted(request.tag.clone())),
            },
        };
        Ok(ChatResponse::new(text, MOCK_PROVIDER))
    }
}
