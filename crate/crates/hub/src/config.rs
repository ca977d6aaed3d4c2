//! `meshhub serve` configuration: one JSON file with sections `server`,
//! `auth`, `adapters`, `repositories`, `facets` and `pid_prefix`.

use std::path::{Path, PathBuf};

use chrono::Duration;
use meshhub_core::adapters::SourceDescriptor;
use meshhub_core::auth::{AccessPolicy, Principal, Role};
use meshhub_core::gateway::RepositoryDescriptor;
use meshhub_core::search::{default_facets, load_facets};
use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::hub::{Hub, HubError, HubOptions};

/// Either an inline list or a path to a JSON file holding one.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ListOrFile<T> {
    List(Vec<T>),
    File(PathBuf),
}

impl<T> Default for ListOrFile<T> {
    fn default() -> Self {
        ListOrFile::List(Vec::new())
    }
}

impl<T: DeserializeOwned + Clone> ListOrFile<T> {
    pub fn load(&self, base: &Path) -> Result<Vec<T>, HubError> {
        match self {
            ListOrFile::List(v) => Ok(v.clone()),
            ListOrFile::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| HubError::Config(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Journals are written here; omitted means in-memory only.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_tick")]
    pub tick_interval_s: u64,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_tick() -> u64 {
    1
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: default_bind(), data_dir: None, tick_interval_s: default_tick() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub user_id: String,
    #[serde(default = "default_idp")]
    pub idp: String,
    #[serde(default)]
    pub grants: Vec<GrantConfig>,
}

fn default_idp() -> String {
    "mock-idp".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantConfig {
    pub path: String,
    pub role: Role,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthConfig {
    /// Hex or plain text; a random key is generated when absent.
    #[serde(default)]
    pub token_key: Option<String>,
    #[serde(default)]
    pub url_key: Option<String>,
    #[serde(default)]
    pub max_lifetime_s: Option<i64>,
    #[serde(default)]
    pub url_ttl_s: Option<i64>,
    #[serde(default)]
    pub mock_idp: bool,
    #[serde(default)]
    pub users: Vec<UserConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptersConfig {
    #[serde(default)]
    pub sources: ListOrFile<SourceDescriptor>,
    #[serde(default = "yes")]
    pub production: bool,
    #[serde(default = "default_trial_source")]
    pub trial_source: Option<String>,
}

fn yes() -> bool {
    true
}

fn default_trial_source() -> Option<String> {
    Some("trial_registry".into())
}

impl Default for AdaptersConfig {
    fn default() -> Self {
        Self { sources: ListOrFile::default(), production: true, trial_source: default_trial_source() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubConfig {
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub auth: AuthConfig,
    #[serde(default)]
    pub adapters: AdaptersConfig,
    #[serde(default)]
    pub repositories: ListOrFile<RepositoryDescriptor>,
    /// Path to a facet configuration file; the bundled one otherwise.
    #[serde(default)]
    pub facets: Option<PathBuf>,
    #[serde(default)]
    pub pid_prefix: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Directory relative paths resolve against; set by `load`.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn key_or_random(k: &Option<String>) -> Vec<u8> {
    match k {
        Some(k) => k.as_bytes().to_vec(),
        None => {
            log::warn!("no signing key configured; tokens will not survive a restart");
            let mut key = vec![0u8; 32];
            rand::rng().fill_bytes(&mut key);
            key
        }
    }
}

impl HubConfig {
    pub fn load(path: &Path) -> Result<Self, HubError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: HubConfig =
            serde_json::from_str(&text).map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn options(&self) -> Result<HubOptions, HubError> {
        let mut o = HubOptions {
            data_dir: self.server.data_dir.as_ref().map(|d| self.base_dir.join(d)),
            token_key: key_or_random(&self.auth.token_key),
            url_key: key_or_random(&self.auth.url_key),
            seed: self.seed,
            production: self.adapters.production,
            mock_idp: self.auth.mock_idp,
            trial_source: self.adapters.trial_source.clone(),
            ..HubOptions::default()
        };
        if let Some(p) = &self.pid_prefix {
            o.pid_prefix = p.clone();
        }
        if let Some(s) = self.auth.max_lifetime_s {
            o.max_token_lifetime = Duration::seconds(s);
        }
        if let Some(s) = self.auth.url_ttl_s {
            o.url_ttl = Duration::seconds(s);
        }
        o.facets = match &self.facets {
            Some(p) => load_facets(self.base_dir.join(p)).map_err(|e| HubError::Config(e.to_string()))?,
            None => default_facets(),
        };
        Ok(o)
    }

    /// Registers configured users, grants, repositories and sources that
    /// the hub does not know yet. Safe to repeat on every start.
    pub fn apply(&self, hub: &Hub) -> Result<(), HubError> {
        for u in &self.auth.users {
            hub.auth.register_user(Principal::new(&u.user_id, &u.idp))?;
            for g in &u.grants {
                hub.auth.grant(AccessPolicy {
                    resource_path: g.path.clone(),
                    role: g.role,
                    principal: u.user_id.clone(),
                })?;
            }
        }
        for r in self.repositories.load(&self.base_dir)? {
            if !hub.registry.contains(&r.repository_id) {
                hub.registry.register(r)?;
            }
        }
        let known: Vec<String> = hub.adapters.sources().into_iter().map(|s| s.source_id).collect();
        for s in self.adapters.sources.load(&self.base_dir)? {
            if !known.contains(&s.source_id) {
                hub.adapters.register_source(s)?;
            }
        }
        Ok(())
    }
}
