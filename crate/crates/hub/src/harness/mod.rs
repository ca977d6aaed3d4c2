//! A whole mesh in one process: the hub, mock repositories and mock
//! metadata sources, each on its own loopback port, driven by a manual
//! clock.

mod client;
mod fixture;
mod invariants;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use meshhub_core::auth::{AccessPolicy, Audience, Principal, Role};
use meshhub_core::clock::{ManualClock, SharedClock};
use meshhub_core::gateway::{
    BucketDescriptor, BucketUrlSigner, CapabilityDescriptor, Endpoints, RepositoryDescriptor, Tier,
};
use meshhub_core::tree::DotPath;
use thiserror::Error;
use tokio::runtime::Runtime;

use crate::connector::{HttpConnector, HttpFetcher};
use crate::hub::{Hub, HubError, HubOptions};
use crate::mock::{MockObject, MockRepo, MockSources, TokenCheck};
use crate::server;

pub use client::{HubClient, Reply};
pub use fixture::{seed_fixture, Profile};
pub use invariants::check_invariants;
pub use scenario::{load_script, parse_script, run_script, AssertOutcome, Check, ScenarioReport, Script, Step, StepSpec};

pub const ADMIN_USER: &str = "hub-admin";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no free loopback port: {0}")]
    PortExhausted(String),
    #[error("refusing to seed a non-empty store ({0})")]
    NonEmptyStore(String),
    #[error("malformed script: {0}")]
    Script(String),
    #[error("http: {0}")]
    Http(String),
    #[error("{0}")]
    Step(String),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! via_hub {
    ($($t:ty),*) => {
        $(impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Hub(e.into())
            }
        })*
    };
}

via_hub!(
    meshhub_core::auth::AuthError,
    meshhub_core::gateway::GatewayError,
    meshhub_core::pid::PidError,
    meshhub_core::registration::RegistrationError
);

impl HarnessError {
    pub fn step(e: impl std::fmt::Display) -> Self {
        HarnessError::Step(e.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MeshOptions {
    pub seed: Option<u64>,
    /// Journals go here; a fresh temporary directory otherwise.
    pub data_dir: Option<PathBuf>,
    /// Everything in memory, no journals at all.
    pub in_memory: bool,
}

pub struct Mesh {
    rt: Runtime,
    pub clock: ManualClock,
    pub hub: Arc<Hub>,
    pub hub_url: String,
    pub sources: Arc<MockSources>,
    pub sources_url: String,
    repos: BTreeMap<String, Arc<MockRepo>>,
    client: HubClient,
    _tmp: Option<tempfile::TempDir>,
}

impl std::fmt::Debug for Mesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mesh")
            .field("hub_url", &self.hub_url)
            .field("repos", &self.repos.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

fn port_error(e: std::io::Error) -> HarnessError {
    HarnessError::PortExhausted(e.to_string())
}

impl Mesh {
    pub fn start(opts: MeshOptions) -> Result<Self, HarnessError> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let (tmp, data_dir) = match (&opts.data_dir, opts.in_memory) {
            (_, true) => (None, None),
            (Some(d), false) => {
                std::fs::create_dir_all(d)?;
                (None, Some(d.clone()))
            }
            (None, false) => {
                let t = tempfile::tempdir()?;
                let p = t.path().to_path_buf();
                (Some(t), Some(p))
            }
        };
        let clock = ManualClock::at_default_epoch();
        let shared: SharedClock = Arc::new(clock.clone());
        let options = HubOptions {
            data_dir,
            seed: opts.seed,
            mock_idp: true,
            ..HubOptions::default()
        };
        let timeout = Duration::from_secs(10);
        let hub = Arc::new(Hub::build(
            options,
            shared,
            Arc::new(HttpConnector::new(timeout)),
            Arc::new(HttpFetcher::new(timeout)),
        )?);
        hub.auth.register_user(Principal::new(ADMIN_USER, "hub"))?;
        hub.auth.grant(AccessPolicy {
            resource_path: "/".into(),
            role: Role::HubAdmin,
            principal: ADMIN_USER.into(),
        })?;

        let (hub_url, _) = server::spawn_local(&rt, crate::api::router(hub.clone())).map_err(port_error)?;
        let sources = Arc::new(MockSources::default());
        let (sources_url, _) = server::spawn_local(&rt, sources.router()).map_err(port_error)?;
        let client = HubClient::new(&hub_url);
        Ok(Self {
            rt,
            clock,
            hub,
            hub_url,
            sources,
            sources_url,
            repos: BTreeMap::new(),
            client,
            _tmp: tmp,
        })
    }

    pub fn client(&self) -> &HubClient {
        &self.client
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.hub.data_dir()
    }

    pub fn runtime(&self) -> &Runtime {
        &self.rt
    }

    /// A fresh admin bearer token, valid at the current simulated time.
    pub fn admin_token(&self) -> Result<String, HarnessError> {
        let scopes = ["read", "write", "data"].map(String::from);
        Ok(self.hub.auth.issue_token(ADMIN_USER, &scopes, Audience::Api)?.token)
    }

    /// Logs `user` in through the mock identity provider over HTTP.
    pub fn login(&self, user: &str) -> Result<String, HarnessError> {
        let reply = self
            .client
            .post("/mock-idp/login", None, &serde_json::json!({ "username": user }))?;
        reply.expect_ok()?;
        reply.body["token"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| HarnessError::Http("login reply without token".into()))
    }

    pub fn repo(&self, id: &str) -> Option<&Arc<MockRepo>> {
        self.repos.get(id)
    }

    pub fn repos(&self) -> impl Iterator<Item = &Arc<MockRepo>> {
        self.repos.values()
    }

    /// Serves a mock repository, registers it with the hub and mints a PID
    /// for each object. `allow_list` is the set of users cleared for
    /// controlled objects, enforced by the repository itself on FULL_API
    /// and through the bucket allow list otherwise.
    pub fn spawn_mock_repo(
        &mut self,
        id: &str,
        tier: Tier,
        objects: Vec<MockObject>,
        allow_list: BTreeSet<String>,
    ) -> Result<Arc<MockRepo>, HarnessError> {
        let listener = server::bind(&self.rt, "127.0.0.1:0").map_err(port_error)?;
        let base = format!("http://{}", listener.local_addr()?);
        let auth = self.hub.auth.clone();
        let token_check: TokenCheck = Arc::new(move |t: &str| auth.validate_token(t).ok().map(|t| t.user_id));
        let repo = Arc::new(MockRepo::new(
            id,
            tier,
            base.clone(),
            objects,
            token_check,
            BucketUrlSigner::new(self.hub.options.url_key.clone()),
            Arc::new(self.clock.clone()),
        ));
        server::serve(&self.rt, listener, repo.router()).map_err(port_error)?;

        let url = |p: &str| Some(format!("{base}/{p}"));
        let endpoints = match tier {
            Tier::FullApi => Endpoints { metadata: url("metadata"), data: url("data"), auth: url("auth") },
            Tier::MetadataOnly => Endpoints { metadata: url("metadata"), ..Endpoints::default() },
            Tier::BucketOnly => Endpoints::default(),
        };
        let bucket = tier.uses_bucket().then(|| BucketDescriptor {
            name: repo.bucket_name.clone(),
            endpoint: format!("{base}/bucket"),
            allow_list: allow_list.clone(),
        });
        let desc = RepositoryDescriptor {
            repository_id: id.to_string(),
            display_name: format!("Mock repository {id}"),
            tier,
            endpoints,
            bucket,
            report_sink: format!("{base}/sink"),
            sia: CapabilityDescriptor {
                supported_object_kinds: vec!["file".into()],
                minimum_metadata_fields: vec![
                    DotPath::parse("title").expect("static path"),
                    DotPath::parse("checksums").expect("static path"),
                ],
                governance_note: "mock member".into(),
            },
        };
        self.hub.registry.register(desc)?;
        if tier == Tier::FullApi {
            repo.set_grants(allow_list);
        }
        for obj in repo.objects() {
            let checksums = BTreeMap::from([("sha256".to_string(), obj.sha256.clone())]);
            let rec = self
                .hub
                .pids
                .mint_pid(id, obj.size_bytes, checksums, vec![repo.access_method(&obj)])?;
            repo.assign_pid(&obj.key, &rec.pid);
        }
        self.repos.insert(id.to_string(), repo.clone());
        Ok(repo)
    }

    /// PID of the object stored under `key` in repository `id`.
    pub fn pid_of(&self, id: &str, key: &str) -> Option<String> {
        self.repos.get(id)?.objects().into_iter().find(|o| o.key == key)?.pid
    }

    /// Advances simulated time one second at a time, running the hub's
    /// background work after each step.
    pub fn tick(&self, seconds: u64) {
        for _ in 0..seconds {
            self.clock.advance_secs(1);
            self.hub.tick();
        }
    }

    /// Bytes under the hub's data directory.
    pub fn disk_usage(&self) -> u64 {
        self.data_dir().map(crate::hub::disk_usage).unwrap_or(0)
    }
}
