//! Reading and writing case collection files.

use std::path::{Path, PathBuf};

use vpsim_core::case::{CaseCollection, CaseError};

#[derive(Debug, thiserror::Error)]
pub enum CaseFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: CaseError },
}

pub fn load_cases(path: &Path) -> Result<CaseCollection, CaseFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseFileError::Io { path: path.into(), source })?;
    CaseCollection::from_json_str(&text).map_err(|source| CaseFileError::Invalid { path: path.into(), source })
}

/// Validates and writes atomically (temp file + rename).
pub fn save_cases(path: &Path, cases: &CaseCollection) -> Result<(), CaseFileError> {
    let text = cases.to_json_string().map_err(|source| CaseFileError::Invalid { path: path.into(), source })?;
    let io = |source| CaseFileError::Io { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
