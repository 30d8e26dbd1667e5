//! Bounded retry with exponential backoff for transient gateway failures.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use vpsim_core::{ChatRequest, ChatResponse, GatewayError, LlmGateway};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub max: Duration,
}

impl Backoff {
    pub const NONE: Backoff = Backoff { base: Duration::ZERO, max: Duration::ZERO };

    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.max)
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_millis(500), max: Duration::from_secs(8) }
    }
}

/// Wraps a gateway with an attempt budget. Only transient errors (timeouts,
/// transport failures) are retried; auth and content errors surface at once.
pub struct Retrying<G> {
    inner: G,
    attempts: u32,
    backoff: Backoff,
    parallel: bool,
    retries: AtomicU64,
}

impl<G> Retrying<G> {
    /// `attempts` is the total number of calls allowed per request (at least 1).
    pub fn new(inner: G, attempts: u32) -> Self {
        Self {
            inner,
            attempts: attempts.max(1),
            backoff: Backoff::default(),
            parallel: false,
            retries: AtomicU64::new(0),
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    /// Fan `complete_all` batches out over threads (useful for HTTP providers).
    pub fn parallel(mut self, yes: bool) -> Self {
        self.parallel = yes;
        self
    }

    /// Retries performed so far across all requests.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }
}

impl<G: LlmGateway + Sync> LlmGateway for Retrying<G> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut attempt = 1;
        loop {
            match self.inner.complete(request) {
                Ok(r) => return Ok(r),
                Err(e) if !e.is_transient() => return Err(e),
                Err(e) if attempt >= self.attempts => {
                    return Err(GatewayError::Exhausted { attempts: self.attempts, last: e.to_string() })
                }
                Err(e) => {
                    tracing::warn!(tag = %request.tag, attempt, error = %e, "retrying gateway call");
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    let delay = self.backoff.delay(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
            }
        }
    }

    fn complete_all(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        if !self.parallel || requests.len() < 2 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = requests.iter().map(|r| s.spawn(move || self.complete(r))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(GatewayError::Transport("gateway worker panicked".into())))
                })
                .collect()
        })
    }
}
