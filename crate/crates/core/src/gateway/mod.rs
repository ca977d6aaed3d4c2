//! The hub's edge to mesh members.
//!
//! Data access is pass-through: for FULL_API repositories the hub forwards
//! an on-behalf-of request and relays whatever the repository decides; for
//! the bucket tiers it signs a short-lived URL only for allow-listed users.
//! Object bytes never pass through or rest in the hub.

mod conformance;
mod connector;
mod registry;
mod signing;
mod usage;

use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conformance::{CheckOutcome, ConformanceReport, RequirementCheck};
pub use connector::{
    AccessDecision, BucketObject, ConnectorError, RemoteObject, RepositoryConnector,
};
pub use registry::{
    BucketDescriptor, CapabilityDescriptor, Endpoints, RepositoryDescriptor, RepositoryRegistry,
    Tier,
};
pub use signing::{BucketUrlSigner, SignedRequest, UrlCheckError};
pub use usage::{idempotency_key, UsageAction, UsageDigest, UsageEvent, UsageLog};

use crate::auth::{AuthError, AuthService, Principal};
use crate::clock::SharedClock;
use crate::journal::JournalError;
use crate::pid::{parse_bucket_locator, AccessKind, DataObjectRecord, PidError, PidIndex};

pub const DEFAULT_URL_TTL_SECS: i64 = 300;
pub const DEFAULT_REPORT_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown repository {0}")]
    UnknownRepository(String),
    #[error("repository {0} is already registered")]
    DuplicateRepository(String),
    #[error("invalid repository descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("unknown pid {0}")]
    UnknownPid(String),
    #[error("invalid token: {0}")]
    TokenInvalid(String),
    #[error("access denied: {0}")]
    Denied(String),
    #[error("repository unavailable: {0}")]
    RepositoryUnavailable(String),
    #[error("report delivery failed after {attempts} attempts: {last}")]
    ReportDelivery { attempts: u32, last: String },
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone)]
pub struct GatewaySettings {
    pub url_signing_key: Vec<u8>,
    pub url_ttl: Duration,
    pub report_attempts: u32,
    /// Service principal used for conformance probes.
    pub probe_user: String,
}

impl GatewaySettings {
    pub fn new(url_signing_key: impl Into<Vec<u8>>) -> Self {
        Self {
            url_signing_key: url_signing_key.into(),
            url_ttl: Duration::seconds(DEFAULT_URL_TTL_SECS),
            report_attempts: DEFAULT_REPORT_ATTEMPTS,
            probe_user: "mesh-probe".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessUrl {
    pub pid: String,
    pub repository_id: String,
    pub url: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub digest: UsageDigest,
    pub attempts: u32,
}

pub struct Gateway {
    registry: Arc<RepositoryRegistry>,
    pids: Arc<PidIndex>,
    auth: Arc<AuthService>,
    connector: Arc<dyn RepositoryConnector>,
    signer: BucketUrlSigner,
    usage: UsageLog,
    clock: SharedClock,
    url_ttl: Duration,
    report_attempts: u32,
    probe_user: String,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("repositories", &self.registry.count())
            .field("usage_events", &self.usage.len())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        registry: Arc<RepositoryRegistry>,
        pids: Arc<PidIndex>,
        auth: Arc<AuthService>,
        connector: Arc<dyn RepositoryConnector>,
        usage: UsageLog,
        settings: GatewaySettings,
        clock: SharedClock,
    ) -> Self {
        Self {
            registry,
            pids,
            auth,
            connector,
            signer: BucketUrlSigner::new(settings.url_signing_key),
            usage,
            clock,
            url_ttl: settings.url_ttl,
            report_attempts: settings.report_attempts.max(1),
            probe_user: settings.probe_user,
        }
    }

    pub fn registry(&self) -> &Arc<RepositoryRegistry> {
        &self.registry
    }

    pub fn usage(&self) -> &UsageLog {
        &self.usage
    }

    pub fn url_signer(&self) -> &BucketUrlSigner {
        &self.signer
    }

    /// Exchanges a bearer token and PID for a time-limited URL, if the
    /// owning repository (or its allow list) authorizes the user. Every call
    /// that gets as far as an authorization decision records exactly one
    /// usage event.
    pub fn fetch_access_url(&self, bearer: &str, pid: &str) -> Result<AccessUrl, GatewayError> {
        let token = self.auth.validate_token(bearer).map_err(token_error)?;
        let record = self.resolve(pid)?;
        let repo = self.registry.get(&record.repository_id)?;
        let now = self.clock.now();
        let user = token.user_id.as_str();

        let outcome = if repo.tier.uses_bucket() {
            self.bucket_url(&repo, &record, user, now)
        } else {
            self.forward(&repo, &record, bearer)
        };
        let action = match &outcome {
            Ok(_) => UsageAction::UrlIssued,
            Err(_) => UsageAction::Denied,
        };
        self.usage.record(pid, user, &repo.repository_id, action, now)?;
        let (url, expires_at) = outcome?;
        Ok(AccessUrl {
            pid: pid.to_string(),
            repository_id: repo.repository_id,
            url,
            expires_at,
        })
    }

    /// PID resolution on behalf of an authenticated caller; recorded as a
    /// `resolved` event. Anonymous resolution goes to the index directly.
    pub fn resolve_for(&self, bearer: &str, pid: &str) -> Result<DataObjectRecord, GatewayError> {
        let token = self.auth.validate_token(bearer).map_err(token_error)?;
        let record = self.resolve(pid)?;
        self.usage.record(
            pid,
            &token.user_id,
            &record.repository_id,
            UsageAction::Resolved,
            self.clock.now(),
        )?;
        Ok(record)
    }

    pub fn record_usage(
        &self,
        pid: &str,
        user_id: &str,
        repository_id: &str,
        action: UsageAction,
    ) -> Result<UsageEvent, GatewayError> {
        if !self.registry.contains(repository_id) {
            return Err(GatewayError::UnknownRepository(repository_id.to_string()));
        }
        Ok(self
            .usage
            .record(pid, user_id, repository_id, action, self.clock.now())?)
    }

    pub fn usage_report(&self, repository_id: &str, day: NaiveDate) -> Result<UsageDigest, GatewayError> {
        if !self.registry.contains(repository_id) {
            return Err(GatewayError::UnknownRepository(repository_id.to_string()));
        }
        Ok(self.usage.digest(repository_id, day))
    }

    /// Posts the day's digest to the repository's report sink, retrying up
    /// to the configured number of attempts. The sink deduplicates on the
    /// idempotency key, so a retry after a lost acknowledgement is harmless.
    pub fn deliver_report(&self, repository_id: &str, day: NaiveDate) -> Result<DeliveryReceipt, GatewayError> {
        let repo = self.registry.get(repository_id)?;
        let digest = self.usage.digest(repository_id, day);
        let key = digest.idempotency_key();
        let mut last = String::new();
        for attempt in 1..=self.report_attempts {
            match self.connector.deliver_report(&repo.report_sink, &key, &digest) {
                Ok(()) => return Ok(DeliveryReceipt { digest, attempts: attempt }),
                Err(e) => {
                    log::warn!("report {key} attempt {attempt} failed: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(GatewayError::ReportDelivery {
            attempts: self.report_attempts,
            last,
        })
    }

    /// One delivery per registered repository, heartbeat digests included.
    pub fn deliver_all(&self, day: NaiveDate) -> Vec<(String, Result<DeliveryReceipt, GatewayError>)> {
        self.registry
            .list()
            .into_iter()
            .map(|r| {
                let res = self.deliver_report(&r.repository_id, day);
                (r.repository_id, res)
            })
            .collect()
    }

    fn resolve(&self, pid: &str) -> Result<DataObjectRecord, GatewayError> {
        self.pids.resolve_pid(pid).map_err(|e| match e {
            PidError::Journal(j) => GatewayError::Journal(j),
            _ => GatewayError::UnknownPid(pid.to_string()),
        })
    }

    fn bucket_url(
        &self,
        repo: &RepositoryDescriptor,
        record: &DataObjectRecord,
        user: &str,
        now: DateTime<Utc>,
    ) -> Result<(String, DateTime<Utc>), GatewayError> {
        let bucket = repo
            .bucket
            .as_ref()
            .ok_or_else(|| GatewayError::InvalidDescriptor(format!("{} has no bucket", repo.repository_id)))?;
        let (method, key) = record
            .access_methods
            .iter()
            .filter(|m| m.kind == AccessKind::Bucket)
            .find_map(|m| parse_bucket_locator(&m.locator).map(|(_, key)| (m, key)))
            .ok_or_else(|| GatewayError::Denied(format!("{} has no bucket locator", record.pid)))?;
        if method.requires_authorization && !bucket.allow_list.contains(user) {
            return Err(GatewayError::Denied(format!(
                "{user} is not on the allow list of {}",
                bucket.name
            )));
        }
        let expires_at = now + self.url_ttl;
        let url = self.signer.sign(&bucket.endpoint, &bucket.name, key, user, expires_at);
        Ok((url, expires_at))
    }

    fn forward(
        &self,
        repo: &RepositoryDescriptor,
        record: &DataObjectRecord,
        bearer: &str,
    ) -> Result<(String, DateTime<Utc>), GatewayError> {
        let method = record
            .access_methods
            .iter()
            .find(|m| m.kind == AccessKind::RepoApi)
            .ok_or_else(|| GatewayError::Denied(format!("{} has no repository access method", record.pid)))?;
        match self.connector.request_access(repo, &method.locator, bearer) {
            Ok(AccessDecision::Granted { url, expires_at }) => Ok((url, expires_at)),
            Ok(AccessDecision::Denied { reason }) => Err(GatewayError::Denied(reason)),
            Err(ConnectorError::Unauthorized(why)) => Err(GatewayError::Denied(why)),
            Err(e) => Err(GatewayError::RepositoryUnavailable(e.to_string())),
        }
    }

    fn probe_token(&self) -> Result<String, AuthError> {
        self.auth
            .register_user(Principal::new(&self.probe_user, "hub"))?;
        Ok(self.auth.workspace_token(&self.probe_user)?.token)
    }
}

fn token_error(e: AuthError) -> GatewayError {
    GatewayError::TokenInvalid(e.to_string())
}

#[cfg(test)]
pub(crate) mod test_support;
