//! Gateway implementations: a scripted mock for offline runs, a retrying
//! wrapper, an OpenAI-compatible HTTP client and a JSON-lines audit logger.

mod audit;
mod http;
mod mock;
mod retry;

pub use audit::{AuditRecord, Audited};
pub use http::{HttpGateway, HttpGatewayConfig};
pub use mock::{FailKind, Matcher, MockEntry, MockPolicy, MockReply, ScriptedMock};
pub use retry::{Backoff, Retrying};

use std::sync::Arc;

use vpsim_core::LlmGateway;

/// The gateway type shared by the session manager, the service and the CLI.
pub type SharedGateway = Arc<dyn LlmGateway + Send + Sync>;
