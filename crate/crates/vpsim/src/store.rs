//! Per-session JSON-lines event logs plus a snapshot written on close.
//!
//! The log is the source of truth; the snapshot is a convenience copy of the
//! final state for people reading the directory by hand.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use vpsim_core::session::ReplayError;
use vpsim_core::{SessionEvent, SessionState};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Replay { path: PathBuf, source: ReplayError },
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

/// Ids become file names, so only `[A-Za-z0-9_-]` is accepted.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.snapshot.json"))
    }

    fn checked(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.into()));
        }
        Ok(self.log_path(id))
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_id(id) && self.log_path(id).exists()
    }

    /// Appends records and syncs them to disk before returning.
    pub fn append(&self, id: &str, events: &[SessionEvent]) -> Result<(), StoreError> {
        let path = self.checked(id)?;
        if events.is_empty() {
            return Ok(());
        }
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e).map_err(|e| io(io::Error::other(e)))?);
            buf.push('\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        f.write_all(buf.as_bytes()).map_err(io)?;
        f.sync_data().map_err(io)
    }

    /// Reads a log. A torn final line without a newline is dropped.
    pub fn read_events(&self, id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        let path = self.checked(id)?;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.into())),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        parse_log(&text).map_err(|(line, reason)| StoreError::Corrupt { path, line, reason })
    }

    pub fn load(&self, id: &str) -> Result<SessionState, StoreError> {
        let events = self.read_events(id)?;
        SessionState::replay(&events).map_err(|source| StoreError::Replay { path: self.log_path(id), source })
    }

    pub fn write_snapshot(&self, state: &SessionState) -> Result<(), StoreError> {
        let path = self.checked(&state.session_id).map(|_| self.snapshot_path(&state.session_id))?;
        let io = |source| StoreError::Io { path: path.clone(), source };
        let text = serde_json::to_string_pretty(state).map_err(|e| io(io::Error::other(e)))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }

    /// Ids of every stored session, sorted.
    pub fn ids(&self) -> Result<Vec<String>, StoreError> {
        let rd = std::fs::read_dir(&self.dir).map_err(|source| StoreError::Io { path: self.dir.clone(), source })?;
        let mut ids: Vec<String> = rd
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".jsonl")).map(str::to_owned))
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// Parses log text; errors carry the 1-based line number.
pub fn parse_log(text: &str) -> Result<Vec<SessionEvent>, (usize, String)> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(_) if i + 1 == lines.len() && !raw.ends_with('\n') => break,
            Err(e) => return Err((i + 1, e.to_string())),
        }
    }
    Ok(out)
}
