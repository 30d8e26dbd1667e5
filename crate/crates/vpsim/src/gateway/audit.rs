//! Append-only JSON-lines log of every gateway call.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use vpsim_core::{ChatRequest, ChatResponse, GatewayError, LlmGateway};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at_ms: u64,
    pub tag: String,
    pub temperature: f32,
    pub max_output: u32,
    pub system_prompt: String,
    pub user_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    #[serde(default)]
    pub truncated: bool,
}

impl AuditRecord {
    /// Reads a log; a torn final line (crash mid-write) is skipped.
    pub fn read_log(path: &Path) -> io::Result<Vec<AuditRecord>> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
                Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))),
            }
        }
        Ok(out)
    }
}

/// Records each call of the wrapped gateway. Put it inside [`super::Retrying`]
/// so every provider attempt gets its own line.
pub struct Audited<G> {
    inner: G,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl<G> Audited<G> {
    pub fn new(inner: G, sink: Box<dyn Write + Send>) -> Self {
        Self { inner, sink: Mutex::new(sink) }
    }

    pub fn to_file(inner: G, path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file: File = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(inner, Box::new(file)))
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    fn write(&self, record: &AuditRecord) {
        let Ok(mut line) = serde_json::to_string(record) else { return };
        line.push('\n');
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = sink.write_all(line.as_bytes()).and_then(|_| sink.flush()) {
            tracing::error!(error = %e, "audit log write failed");
        }
    }
}

impl<G: LlmGateway> LlmGateway for Audited<G> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = Instant::now();
        let result = self.inner.complete(request);
        let elapsed = started.elapsed().as_millis() as u64;
        let at_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let mut record = AuditRecord {
            at_ms,
            tag: request.tag.clone(),
            temperature: request.temperature,
            max_output: request.max_output,
            system_prompt: request.system_prompt.clone(),
            user_prompt: request.user_prompt.clone(),
            response: None,
            error: None,
            latency_ms: elapsed,
            provider: None,
            truncated: false,
        };
        match &result {
            Ok(r) => {
                record.response = Some(r.text.clone());
                record.provider = Some(r.provider.clone());
                record.truncated = r.truncated;
                if r.latency_ms > 0 {
                    record.latency_ms = r.latency_ms;
                }
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        self.write(&record);
        result
    }
}
