use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{BucketDescriptor, RepositoryDescriptor, UsageDigest};
use crate::pid::AccessMethod;

/// One object as a repository advertises it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteObject {
    #[serde(default)]
    pub pid: Option<String>,
    pub key: String,
    pub size_bytes: u64,
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketObject {
    pub key: String,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum AccessDecision {
    Granted {
        url: String,
        expires_at: DateTime<Utc>,
    },
    Denied {
        reason: String,
    },
}

#[derive(Debug, Clone, Error)]
pub enum ConnectorError {
    #[error("repository unreachable: {0}")]
    Unavailable(String),
    /// The repository rejected the presented credential outright.
    #[error("credential rejected: {0}")]
    Unauthorized(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

/// Everything the hub needs from a mesh member, independent of transport.
pub trait RepositoryConnector: Send + Sync {
    fn list_objects(&self, repo: &RepositoryDescriptor) -> Result<Vec<RemoteObject>, ConnectorError>;

    fn object_metadata(&self, repo: &RepositoryDescriptor, pid: &str) -> Result<Value, ConnectorError>;

    /// Access methods the repository's data endpoint reports for a PID.
    fn object_access(
        &self,
        repo: &RepositoryDescriptor,
        pid: &str,
    ) -> Result<Vec<AccessMethod>, ConnectorError>;

    /// Has the repository's auth endpoint issue a token for `user_id` and
    /// then validate it.
    fn auth_handshake(&self, repo: &RepositoryDescriptor, user_id: &str) -> Result<(), ConnectorError>;

    /// Forwards an on-behalf-of request carrying the user's bearer token.
    fn request_access(
        &self,
        repo: &RepositoryDescriptor,
        locator: &str,
        bearer: &str,
    ) -> Result<AccessDecision, ConnectorError>;

    fn list_bucket(&self, bucket: &BucketDescriptor) -> Result<Vec<BucketObject>, ConnectorError>;

    fn deliver_report(
        &self,
        sink: &str,
        idempotency_key: &str,
        digest: &UsageDigest,
    ) -> Result<(), ConnectorError>;
}
