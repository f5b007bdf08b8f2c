use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Deserialize;

use coe_core::clock::{self, SharedClock};
use coe_core::gateway::{Backend, GatewaySettings, HttpBackend, ScriptedBackend};
use coe_core::lexicon::Lexicon;
use coe_core::session::{ServiceConfig, DEFAULT_TURN_LIMIT};
use coe_core::{AgentProfile, Gateway};

/// Where completions come from. `scripted` replaces the HTTP backend with a
/// replay file, which is what tests and offline runs use.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub scripted: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        let settings = GatewaySettings::default();
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: settings.model,
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
            scripted: None,
            audit_log: None,
        }
    }
}

impl GatewayConfig {
    pub fn backend(&self) -> Result<Arc<dyn Backend>> {
        Ok(match &self.scripted {
            Some(path) => Arc::new(
                ScriptedBackend::load(path).with_context(|| format!("loading replies from {}", path.display()))?,
            ),
            None => Arc::new(HttpBackend::from_env(&self.base_url, &self.api_key_env)?),
        })
    }

    pub fn build(&self, clock: SharedClock) -> Result<Gateway> {
        self.build_with(self.backend()?, clock)
    }

    pub fn build_with(&self, backend: Arc<dyn Backend>, clock: SharedClock) -> Result<Gateway> {
        let mut gateway = Gateway::new(backend)
            .with_settings(GatewaySettings {
                model: self.model.clone(),
                temperature: self.temperature,
                max_tokens: self.max_tokens,
            })
            .with_clock(clock);
        if let Some(path) = &self.audit_log {
            gateway = gateway
                .with_audit_file(path)
                .with_context(|| format!("opening audit log {}", path.display()))?;
        }
        Ok(gateway)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    /// Agent profile JSON; the bundled default when absent.
    pub profile: Option<PathBuf>,
    /// Checked at startup so a bad lexicon fails fast rather than at analysis time.
    pub lexicon: Option<PathBuf>,
    pub turn_limit: u32,
    pub seed: u64,
    pub state_dir: Option<PathBuf>,
    pub admin_token_env: String,
    /// Deterministic timestamps, for replays.
    pub logical_clock: bool,
    pub gateway: GatewayConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            profile: None,
            lexicon: None,
            turn_limit: DEFAULT_TURN_LIMIT,
            seed: 0,
            state_dir: None,
            admin_token_env: "COE_ADMIN_TOKEN".into(),
            logical_clock: false,
            gateway: GatewayConfig::default(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.profile);
        fix(&mut self.lexicon);
        fix(&mut self.state_dir);
        fix(&mut self.gateway.scripted);
        fix(&mut self.gateway.audit_log);
    }

    pub fn clock(&self) -> SharedClock {
        if self.logical_clock {
            clock::logical()
        } else {
            clock::system()
        }
    }

    pub fn service_config(&self) -> Result<ServiceConfig> {
        if self.turn_limit == 0 {
            anyhow::bail!("turn_limit must be at least 1");
        }
        if let Some(path) = &self.lexicon {
            Lexicon::load(path).with_context(|| format!("loading lexicon {}", path.display()))?;
        }
        let profile = match &self.profile {
            Some(path) => AgentProfile::load(path).with_context(|| format!("loading profile {}", path.display()))?,
            None => AgentProfile::wunderbar(),
        };
        Ok(ServiceConfig {
            profile,
            turn_limit: self.turn_limit,
            seed: self.seed,
            state_dir: self.state_dir.clone(),
            admin_token: std::env::var(&self.admin_token_env).ok().filter(|t| !t.is_empty()),
        })
    }
}
