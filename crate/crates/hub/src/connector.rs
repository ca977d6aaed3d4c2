//! HTTP transports for repositories and metadata sources.

use std::time::Duration;

use meshhub_core::adapters::SourceFetcher;
use meshhub_core::gateway::{
    AccessDecision, BucketDescriptor, BucketObject, ConnectorError, RemoteObject,
    RepositoryConnector, RepositoryDescriptor, UsageDigest,
};
use meshhub_core::pid::AccessMethod;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ureq::http::Response;
use ureq::{Agent, Body};

pub const IDEMPOTENCY_HEADER: &str = "Idempotency-Key";

pub fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AccessRequest {
    pub locator: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RepoToken {
    pub token: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RepoIdentity {
    pub user_id: String,
}

/// Talks to mesh members over their published HTTP endpoints.
///
/// Endpoint layout, relative to the descriptor URLs:
/// `{metadata}/objects`, `{metadata}/objects/{pid}`, `{data}/objects/{pid}`,
/// `{data}/access`, `{auth}/token`, `{auth}/validate`, and
/// `{bucket.endpoint}/{bucket}` for listings.
#[derive(Debug, Clone)]
pub struct HttpConnector {
    agent: Agent,
}

impl Default for HttpConnector {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

fn unavailable(e: ureq::Error) -> ConnectorError {
    ConnectorError::Unavailable(e.to_string())
}

fn join(base: &str, rest: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), rest.trim_start_matches('/'))
}

fn endpoint<'a>(url: &'a Option<String>, what: &str) -> Result<&'a str, ConnectorError> {
    url.as_deref()
        .ok_or_else(|| ConnectorError::Protocol(format!("no {what} endpoint")))
}

fn expect_json<T: DeserializeOwned>(mut resp: Response<Body>, url: &str) -> Result<T, ConnectorError> {
    let status = resp.status();
    if status == 401 || status == 403 {
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(ConnectorError::Unauthorized(format!("{status} from {url}: {body}")));
    }
    if status.is_server_error() {
        return Err(ConnectorError::Unavailable(format!("{status} from {url}")));
    }
    if !status.is_success() {
        return Err(ConnectorError::Protocol(format!("{status} from {url}")));
    }
    resp.body_mut()
        .read_json()
        .map_err(|e| ConnectorError::Protocol(format!("{url}: {e}")))
}

impl HttpConnector {
    pub fn new(timeout: Duration) -> Self {
        Self { agent: agent(timeout) }
    }

    fn get_json<T: DeserializeOwned>(&self, url: &str, bearer: Option<&str>) -> Result<T, ConnectorError> {
        let mut req = self.agent.get(url);
        if let Some(b) = bearer {
            req = req.header("Authorization", format!("Bearer {b}"));
        }
        expect_json(req.call().map_err(unavailable)?, url)
    }
}

impl RepositoryConnector for HttpConnector {
    fn list_objects(&self, repo: &RepositoryDescriptor) -> Result<Vec<RemoteObject>, ConnectorError> {
        let url = join(endpoint(&repo.endpoints.metadata, "metadata")?, "objects");
        self.get_json(&url, None)
    }

    fn object_metadata(&self, repo: &RepositoryDescriptor, pid: &str) -> Result<Value, ConnectorError> {
        let url = join(endpoint(&repo.endpoints.metadata, "metadata")?, &format!("objects/{pid}"));
        self.get_json(&url, None)
    }

    fn object_access(&self, repo: &RepositoryDescriptor, pid: &str) -> Result<Vec<AccessMethod>, ConnectorError> {
        let url = join(endpoint(&repo.endpoints.data, "data")?, &format!("objects/{pid}"));
        self.get_json(&url, None)
    }

    fn auth_handshake(&self, repo: &RepositoryDescriptor, user_id: &str) -> Result<(), ConnectorError> {
        let base = endpoint(&repo.endpoints.auth, "auth")?;
        let url = join(base, "token");
        let resp = self
            .agent
            .post(&url)
            .send_json(json!({ "user_id": user_id }))
            .map_err(unavailable)?;
        let token: RepoToken = expect_json(resp, &url)?;
        let who: RepoIdentity = self.get_json(&join(base, "validate"), Some(&token.token))?;
        if who.user_id != user_id {
            return Err(ConnectorError::Protocol(format!(
                "token issued for {user_id} validated as {}",
                who.user_id
            )));
        }
        Ok(())
    }

    fn request_access(
        &self,
        repo: &RepositoryDescriptor,
        locator: &str,
        bearer: &str,
    ) -> Result<AccessDecision, ConnectorError> {
        let url = join(endpoint(&repo.endpoints.data, "data")?, "access");
        let resp = self
            .agent
            .post(&url)
            .header("Authorization", format!("Bearer {bearer}"))
            .send_json(AccessRequest { locator: locator.to_string() })
            .map_err(unavailable)?;
        expect_json(resp, &url)
    }

    fn list_bucket(&self, bucket: &BucketDescriptor) -> Result<Vec<BucketObject>, ConnectorError> {
        self.get_json(&join(&bucket.endpoint, &bucket.name), None)
    }

    fn deliver_report(&self, sink: &str, idempotency_key: &str, digest: &UsageDigest) -> Result<(), ConnectorError> {
        let mut resp = self
            .agent
            .post(sink)
            .header(IDEMPOTENCY_HEADER, idempotency_key)
            .send_json(digest)
            .map_err(unavailable)?;
        let status = resp.status();
        if status.is_success() {
            Ok(())
        } else {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            Err(ConnectorError::Unavailable(format!("{status} from {sink}: {body}")))
        }
    }
}

/// GETs source endpoints; any non-2xx status is a fetch failure.
#[derive(Debug, Clone)]
pub struct HttpFetcher {
    agent: Agent,
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Self {
        Self { agent: agent(timeout) }
    }
}

impl SourceFetcher for HttpFetcher {
    fn get(&self, url: &str) -> Result<String, String> {
        let mut resp = self.agent.get(url).call().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status} from {url}"));
        }
        resp.body_mut()
            .with_config()
            .limit(64 << 20)
            .read_to_string()
            .map_err(|e| e.to_string())
    }
}
