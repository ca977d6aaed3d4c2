use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use chrono::{TimeZone, Utc};
use serde_json::Value;

use super::*;
use crate::pid::AccessMethod;
use crate::tree::DotPath;

pub fn descriptor(id: &str, tier: Tier) -> RepositoryDescriptor {
    let url = |p: &str| Some(format!("http://127.0.0.1:9/{id}/{p}"));
    let (endpoints, bucket) = match tier {
        Tier::FullApi => (
            Endpoints {
                metadata: url("metadata"),
                data: url("data"),
                auth: url("auth"),
            },
            None,
        ),
        Tier::MetadataOnly => (
            Endpoints {
                metadata: url("metadata"),
                ..Default::default()
            },
            Some(BucketDescriptor {
                name: format!("{id}-bucket"),
                endpoint: "http://127.0.0.1:9/bucket".into(),
                allow_list: BTreeSet::new(),
            }),
        ),
        Tier::BucketOnly => (
            Endpoints::default(),
            Some(BucketDescriptor {
                name: format!("{id}-bucket"),
                endpoint: "http://127.0.0.1:9/bucket".into(),
                allow_list: BTreeSet::new(),
            }),
        ),
    };
    RepositoryDescriptor {
        repository_id: id.into(),
        display_name: id.to_uppercase(),
        tier,
        endpoints,
        bucket,
        report_sink: format!("http://127.0.0.1:9/sink/{id}"),
        sia: CapabilityDescriptor {
            supported_object_kinds: vec!["file".into()],
            minimum_metadata_fields: vec![DotPath::parse("title").unwrap()],
            governance_note: String::new(),
        },
    }
}


/// In-memory stand-in for every mesh member at once.
#[derive(Default)]
pub struct FakeConnector {
    pub objects: Mutex<BTreeMap<String, Vec<RemoteObject>>>,
    pub metadata: Mutex<BTreeMap<String, Value>>,
    pub buckets: Mutex<BTreeMap<String, Vec<BucketObject>>>,
    /// Users each FULL_API repository authorizes.
    pub grants: Mutex<BTreeMap<String, BTreeSet<String>>>,
    pub down: Mutex<BTreeSet<String>>,
    /// Maps a bearer token to its user, as a repository validating hub tokens would.
    pub validator: Mutex<Option<Box<dyn Fn(&str) -> Option<String> + Send + Sync>>>,
    pub sink_failures: AtomicU32,
    pub sink_posts: AtomicU32,
    pub sink: Mutex<BTreeMap<String, UsageDigest>>,
}

impl FakeConnector {
    fn check_up(&self, repo: &RepositoryDescriptor) -> Result<(), ConnectorError> {
        if self.down.lock().unwrap().contains(&repo.repository_id) {
            return Err(ConnectorError::Unavailable(repo.repository_id.clone()));
        }
        Ok(())
    }
}

impl RepositoryConnector for FakeConnector {
    fn list_objects(&self, repo: &RepositoryDescriptor) -> Result<Vec<RemoteObject>, ConnectorError> {
        self.check_up(repo)?;
        Ok(self.objects.lock().unwrap().get(&repo.repository_id).cloned().unwrap_or_default())
    }

    fn object_metadata(&self, repo: &RepositoryDescriptor, pid: &str) -> Result<Value, ConnectorError> {
        self.check_up(repo)?;
        self.metadata
            .lock()
            .unwrap()
            .get(pid)
            .cloned()
            .ok_or_else(|| ConnectorError::Protocol(format!("404 {pid}")))
    }

    fn object_access(&self, repo: &RepositoryDescriptor, pid: &str) -> Result<Vec<AccessMethod>, ConnectorError> {
        self.check_up(repo)?;
        let known = self.metadata.lock().unwrap().contains_key(pid);
        if !known {
            return Err(ConnectorError::Protocol(format!("404 {pid}")));
        }
        Ok(vec![AccessMethod::repo_api(format!("{}/objects/{pid}", repo.endpoints.data.clone().unwrap_or_default()), true)])
    }

    fn auth_handshake(&self, repo: &RepositoryDescriptor, _user_id: &str) -> Result<(), ConnectorError> {
        self.check_up(repo)?;
        if repo.endpoints.auth.is_none() {
            return Err(ConnectorError::Protocol("no auth endpoint".into()));
        }
        Ok(())
    }

    fn request_access(
        &self,
        repo: &RepositoryDescriptor,
        locator: &str,
        bearer: &str,
    ) -> Result<AccessDecision, ConnectorError> {
        self.check_up(repo)?;
        let user = match self.validator.lock().unwrap().as_ref() {
            Some(v) => v(bearer),
            None => None,
        }
        .ok_or_else(|| ConnectorError::Unauthorized("token not accepted".into()))?;
        let allowed = self
            .grants
            .lock()
            .unwrap()
            .get(&repo.repository_id)
            .is_some_and(|s| s.contains(&user));
        Ok(if allowed {
            AccessDecision::Granted {
                url: format!("{locator}?signed-for={user}"),
                expires_at: Utc.with_ymd_and_hms(2030, 1, 1, 0, 0, 0).unwrap(),
            }
        } else {
            AccessDecision::Denied {
                reason: format!("{user} lacks repository authorization"),
            }
        })
    }

    fn list_bucket(&self, bucket: &BucketDescriptor) -> Result<Vec<BucketObject>, ConnectorError> {
        Ok(self.buckets.lock().unwrap().get(&bucket.name).cloned().unwrap_or_default())
    }

    fn deliver_report(&self, _sink: &str, key: &str, digest: &UsageDigest) -> Result<(), ConnectorError> {
        self.sink_posts.fetch_add(1, Ordering::SeqCst);
        if self
            .sink_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(ConnectorError::Unavailable("sink returned 503".into()));
        }
        self.sink.lock().unwrap().insert(key.to_string(), digest.clone());
        Ok(())
    }
}
