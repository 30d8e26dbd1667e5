//! Minimal scripted gateway for unit tests inside this crate.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::llm::{ChatRequest, ChatResponse, GatewayError, LlmGateway};

struct Entry {
    prefix: String,
    replies: Vec<Result<String, GatewayError>>,
    next: usize,
}

/// Replies are matched by tag prefix in registration order; each entry plays
/// its replies in sequence and then repeats the last one.
#[derive(Default)]
pub struct SeqMock {
    entries: RefCell<Vec<Entry>>,
    requests: RefCell<Vec<ChatRequest>>,
}

impl SeqMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(self, prefix: &str, replies: &[&str]) -> Self {
        let replies = replies.iter().map(|r| Ok(r.to_string())).collect();
        self.on_results(prefix, replies)
    }

    pub fn on_results(self, prefix: &str, replies: Vec<Result<String, GatewayError>>) -> Self {
        self.entries.borrow_mut().push(Entry {
            prefix: prefix.to_string(),
            replies,
            next: 0,
        });
        self
    }

    pub fn calls(&self) -> usize {
        self.requests.borrow().len()
    }

    pub fn calls_with(&self, prefix: &str) -> usize {
        self.requests
            .borrow()
            .iter()
            .filter(|r| r.tag.starts_with(prefix))
            .count()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.borrow().clone()
    }
}

impl LlmGateway for SeqMock {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.requests.borrow_mut().push(request.clone());
        let mut entries = self.entries.borrow_mut();
        let entry = entries
            .iter_mut()
            .find(|e| request.tag.starts_with(&e.prefix) && !e.replies.is_empty())
            .ok_or_else(|| GatewayError::Unscripted(request.tag.clone()))?;
        let idx = entry.next.min(entry.replies.len() - 1);
        entry.next += 1;
        entry.replies[idx]
            .clone()
            .map(|text| ChatResponse::new(text, "seq-mock"))
    }
}
