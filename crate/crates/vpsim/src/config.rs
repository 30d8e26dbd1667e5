//! Deployment configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use vpsim_core::adjustment::DirectionTable;
use vpsim_core::case::CaseCollection;
use vpsim_core::safety::OnExhaustion;
use vpsim_core::session::DEFAULT_TURN_CAP;
use vpsim_core::templates::PromptTemplates;
use vpsim_core::SafetyLoopPolicy;

use crate::cases_io;
use crate::gateway::{Audited, Backoff, HttpGateway, HttpGatewayConfig, MockPolicy, Retrying, ScriptedMock, SharedGateway};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub auth_header: String,
    pub timeout_secs: u64,
    /// Total attempts per request, including the first.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Mock policy file (kind = "mock").
    pub mock_script: Option<PathBuf>,
    /// JSON-lines log of every provider call.
    pub audit_log: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            auth_header: "Authorization".into(),
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
            mock_script: None,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    pub max_revisions: u32,
    pub on_exhaustion: OnExhaustion,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        let p = SafetyLoopPolicy::interactive();
        Self { max_revisions: p.max_revisions, on_exhaustion: p.on_exhaustion }
    }
}

impl SafetyConfig {
    pub fn policy(&self) -> SafetyLoopPolicy {
        SafetyLoopPolicy { max_revisions: self.max_revisions, on_exhaustion: self.on_exhaustion }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub turn_cap: u32,
    pub log_dir: PathBuf,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { turn_cap: DEFAULT_TURN_CAP, log_dir: "sessions".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Trainee,
    Instructor,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    /// Bearer token → role.
    pub tokens: BTreeMap<String, Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    /// Case collection file; the bundled cases when absent.
    pub cases: Option<PathBuf>,
    /// Direction table file; the bundled table when absent.
    pub directions: Option<PathBuf>,
    /// Directory of template override files.
    pub templates_dir: Option<PathBuf>,
    pub provider: ProviderConfig,
    pub safety: SafetyConfig,
    pub session: SessionConfig,
    pub auth: AuthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cases: None,
            directions: None,
            templates_dir: None,
            provider: ProviderConfig::default(),
            safety: SafetyConfig::default(),
            session: SessionConfig::default(),
            auth: AuthConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let c: Config = toml::from_str(text).context("parsing config")?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut c = Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
        c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.cases, &mut self.directions, &mut self.templates_dir]
            .into_iter()
            .chain([&mut self.provider.mock_script, &mut self.provider.audit_log])
            .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.session.log_dir);
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.safety.policy().validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        if self.session.turn_cap == 0 {
            bail!("session.turn_cap must be at least 1");
        }
        if self.provider.retries == 0 {
            bail!("provider.retries must be at least 1");
        }
        Ok(())
    }

    pub fn load_cases(&self) -> anyhow::Result<CaseCollection> {
        match &self.cases {
            Some(p) => Ok(cases_io::load_cases(p)?),
            None => Ok(CaseCollection::bundled()),
        }
    }

    pub fn load_directions(&self) -> anyhow::Result<DirectionTable> {
        match &self.directions {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                DirectionTable::from_json_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
            }
            None => Ok(DirectionTable::default()),
        }
    }

    pub fn load_templates(&self) -> anyhow::Result<PromptTemplates> {
        let mut t = PromptTemplates::default();
        if let Some(dir) = &self.templates_dir {
            for file in PromptTemplates::FILES {
                let p = dir.join(file);
                if p.exists() {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    if let Some(slot) = t.by_file_mut(file) {
                        *slot = text;
                    }
                }
            }
        }
        Ok(t)
    }

    /// Builds the provider stack: retry → audit → provider.
    pub fn build_gateway(&self) -> anyhow::Result<SharedGateway> {
        let p = &self.provider;
        let backoff = Backoff { base: Duration::from_millis(p.backoff_ms), max: Duration::from_millis(p.backoff_ms * 16) };
        match p.kind {
            ProviderKind::Mock => {
                let policy = match &p.mock_script {
                    Some(path) => MockPolicy::load(path)?,
                    None => MockPolicy::new(),
                };
                let mock = ScriptedMock::new(policy);
                Ok(wrap(mock, p, backoff, false)?)
            }
            ProviderKind::Openai => {
                let api_key = match &p.api_key_env {
                    Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
                    None => None,
                };
                let http = HttpGateway::new(HttpGatewayConfig {
                    endpoint: p.endpoint.clone(),
                    model: p.model.clone(),
                    api_key,
                    auth_header: p.auth_header.clone(),
                    timeout: Duration::from_secs(p.timeout_secs),
                });
                Ok(wrap(http, p, backoff, true)?)
            }
        }
    }
}

fn wrap<G>(inner: G, p: &ProviderConfig, backoff: Backoff, parallel: bool) -> anyhow::Result<SharedGateway>
where
    G: vpsim_core::LlmGateway + Send + Sync + 'static,
{
    Ok(match &p.audit_log {
        Some(path) => {
            let audited = Audited::to_file(inner, path).with_context(|| format!("opening {}", path.display()))?;
            Arc::new(Retrying::new(audited, p.retries).with_backoff(backoff).parallel(parallel))
        }
        None => Arc::new(Retrying::new(inner, p.retries).with_backoff(backoff).parallel(parallel)),
    })
}
