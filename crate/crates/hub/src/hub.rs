use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Duration;
use meshhub_core::adapters::{AdapterError, AdapterService, SourceFetcher};
use meshhub_core::auth::{AuthError, AuthService, AuthSettings};
use meshhub_core::clock::SharedClock;
use meshhub_core::gateway::{
    Gateway, GatewayError, GatewaySettings, RepositoryConnector, RepositoryRegistry, UsageLog,
};
use meshhub_core::journal::JournalError;
use meshhub_core::metadata::{MetadataError, MetadataStore};
use meshhub_core::pid::{PidError, PidIndex};
use meshhub_core::registration::{
    RegistrationError, RegistrationService, RegistrationSettings, SlmdSchema,
};
use meshhub_core::search::{default_facets, overview_stats, FacetConfig, OverviewStats, SearchService};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HubError {
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Pid(#[from] PidError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("{0}")]
    Config(String),
}

/// Everything needed to assemble a hub apart from its clock and transports.
#[derive(Debug, Clone)]
pub struct HubOptions {
    /// Journals live here; `None` keeps every store in memory.
    pub data_dir: Option<PathBuf>,
    pub pid_prefix: String,
    pub token_key: Vec<u8>,
    pub url_key: Vec<u8>,
    pub max_token_lifetime: Duration,
    pub url_ttl: Duration,
    pub seed: Option<u64>,
    pub facets: Vec<FacetConfig>,
    pub production: bool,
    pub mock_idp: bool,
    pub trial_source: Option<String>,
}

impl Default for HubOptions {
    fn default() -> Self {
        Self {
            data_dir: None,
            pid_prefix: "heal".into(),
            token_key: b"hub-token-key".to_vec(),
            url_key: b"hub-url-key".to_vec(),
            max_token_lifetime: Duration::seconds(3600),
            url_ttl: Duration::seconds(300),
            seed: None,
            facets: default_facets(),
            production: false,
            mock_idp: false,
            trial_source: Some("trial_registry".into()),
        }
    }
}

pub struct Hub {
    pub clock: SharedClock,
    pub store: Arc<MetadataStore>,
    pub registry: Arc<RepositoryRegistry>,
    pub pids: Arc<PidIndex>,
    pub auth: Arc<AuthService>,
    pub adapters: Arc<AdapterService>,
    pub gateway: Arc<Gateway>,
    pub registration: Arc<RegistrationService>,
    pub search: Arc<SearchService>,
    pub options: HubOptions,
}

impl std::fmt::Debug for Hub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hub")
            .field("documents", &self.store.count())
            .field("repositories", &self.registry.count())
            .field("pids", &self.pids.count())
            .finish_non_exhaustive()
    }
}

fn offset(seed: Option<u64>, by: u64) -> Option<u64> {
    seed.map(|s| s.wrapping_add(by))
}

impl Hub {
    pub fn build(
        options: HubOptions,
        clock: SharedClock,
        connector: Arc<dyn RepositoryConnector>,
        fetcher: Arc<dyn SourceFetcher>,
    ) -> Result<Self, HubError> {
        let dir = options.data_dir.as_deref();
        let file = |name: &str| dir.map(|d| d.join(name));

        let store = Arc::new(match file("metadata.jsonl") {
            Some(p) => MetadataStore::open(p, clock.clone())?,
            None => MetadataStore::in_memory(clock.clone()),
        });
        let registry = Arc::new(match file("repositories.jsonl") {
            Some(p) => RepositoryRegistry::open(p)?,
            None => RepositoryRegistry::in_memory(),
        });
        let pid_seed = offset(options.seed, 1);
        let pids = Arc::new(match file("pids.jsonl") {
            Some(p) => PidIndex::open(p, &options.pid_prefix, pid_seed, registry.clone(), clock.clone())?,
            None => PidIndex::in_memory(&options.pid_prefix, pid_seed, registry.clone(), clock.clone())?,
        });
        let mut auth_settings = AuthSettings::new(options.token_key.clone());
        auth_settings.max_lifetime = options.max_token_lifetime;
        auth_settings.seed = offset(options.seed, 2);
        let auth = Arc::new(match file("auth.jsonl") {
            Some(p) => AuthService::open(p, auth_settings, clock.clone())?,
            None => AuthService::in_memory(auth_settings, clock.clone()),
        });
        let adapters = Arc::new(match file("adapters.jsonl") {
            Some(p) => AdapterService::open(p, store.clone(), fetcher, clock.clone(), options.production)?,
            None => AdapterService::in_memory(store.clone(), fetcher, clock.clone(), options.production),
        });
        let usage = match file("usage.jsonl") {
            Some(p) => UsageLog::open(p)?,
            None => UsageLog::in_memory(),
        };
        let mut gw_settings = GatewaySettings::new(options.url_key.clone());
        gw_settings.url_ttl = options.url_ttl;
        let gateway = Arc::new(Gateway::new(
            registry.clone(),
            pids.clone(),
            auth.clone(),
            connector,
            usage,
            gw_settings,
            clock.clone(),
        ));
        let reg_settings = RegistrationSettings {
            trial_source: options.trial_source.clone(),
            seed: offset(options.seed, 3),
        };
        let schema = SlmdSchema::bundled();
        let registration = Arc::new(match file("studies.jsonl") {
            Some(p) => RegistrationService::open(
                p,
                store.clone(),
                auth.clone(),
                Some(adapters.clone()),
                schema,
                reg_settings,
                clock.clone(),
            )?,
            None => RegistrationService::in_memory(
                store.clone(),
                auth.clone(),
                Some(adapters.clone()),
                schema,
                reg_settings,
                clock.clone(),
            ),
        });
        let search = Arc::new(SearchService::new(store.clone(), options.facets.clone(), clock.clone()));
        Ok(Self {
            clock,
            store,
            registry,
            pids,
            auth,
            adapters,
            gateway,
            registration,
            search,
            options,
        })
    }

    pub fn stats(&self) -> OverviewStats {
        overview_stats(&self.store, &self.registration, &self.registry, &self.pids)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.options.data_dir.as_deref()
    }

    /// One scheduler pass plus a debounced index refresh.
    pub fn tick(&self) {
        let runs = self.adapters.schedule_tick(self.clock.now());
        for run in &runs {
            log::info!(
                "run {} of {}: fetched {} created {} updated {} unchanged {} errors {}",
                run.run_id,
                run.source_id,
                run.fetched,
                run.created,
                run.updated,
                run.unchanged,
                run.errors.len()
            );
        }
        self.search.tick();
    }
}

/// Bytes on disk under `dir`, recursively. Missing directories count as 0.
pub fn disk_usage(dir: &Path) -> u64 {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return 0;
    };
    entries
        .filter_map(Result::ok)
        .map(|e| match e.metadata() {
            Ok(m) if m.is_dir() => disk_usage(&e.path()),
            Ok(m) => m.len(),
            Err(_) => 0,
        })
        .sum()
}
