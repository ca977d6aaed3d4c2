use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::journal::Journal;
use crate::tree::DotPath;

/// How much API a repository exposes to the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    FullApi,
    MetadataOnly,
    BucketOnly,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::FullApi, Tier::MetadataOnly, Tier::BucketOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::FullApi => "FULL_API",
            Tier::MetadataOnly => "METADATA_ONLY",
            Tier::BucketOnly => "BUCKET_ONLY",
        }
    }

    /// Tiers whose objects are reached through a hub-signed bucket URL.
    pub fn uses_bucket(self) -> bool {
        !matches!(self, Tier::FullApi)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketDescriptor {
    pub name: String,
    /// Base URL of the object store serving this bucket.
    pub endpoint: String,
    #[serde(default)]
    pub allow_list: BTreeSet<String>,
}

/// Machine-readable stand-in for the interoperability agreement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityDescriptor {
    pub supported_object_kinds: Vec<String>,
    pub minimum_metadata_fields: Vec<DotPath>,
    #[serde(default)]
    pub governance_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryDescriptor {
    pub repository_id: String,
    pub display_name: String,
    pub tier: Tier,
    #[serde(default)]
    pub endpoints: Endpoints,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<BucketDescriptor>,
    pub report_sink: String,
    pub sia: CapabilityDescriptor,
}

impl RepositoryDescriptor {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: String| {
            Err(GatewayError::InvalidDescriptor(format!(
                "{}: {msg}",
                self.repository_id
            )))
        };
        if !regex!(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$").is_match(&self.repository_id) {
            return bad("repository_id must be alphanumeric with _ . -".into());
        }
        if self.report_sink.trim().is_empty() {
            return bad("report_sink is required".into());
        }
        if self.sia.minimum_metadata_fields.is_empty() {
            return bad("sia.minimum_metadata_fields must be nonempty".into());
        }
        let e = &self.endpoints;
        match self.tier {
            Tier::FullApi => {
                if e.metadata.is_none() || e.data.is_none() || e.auth.is_none() {
                    return bad("FULL_API requires metadata, data and auth endpoints".into());
                }
            }
            Tier::MetadataOnly => {
                if e.metadata.is_none() || self.bucket.is_none() {
                    return bad("METADATA_ONLY requires a metadata endpoint and a bucket".into());
                }
            }
            Tier::BucketOnly => {
                if self.bucket.is_none() {
                    return bad("BUCKET_ONLY requires a bucket".into());
                }
            }
        }
        if let Some(bucket) = &self.bucket {
            if bucket.name.is_empty() || bucket.name.contains('/') || bucket.endpoint.is_empty() {
                return bad("bucket needs a name without '/' and an endpoint".into());
            }
        }
        Ok(())
    }
}

/// Registered mesh members, optionally persisted as a journal of
/// descriptors (last entry per id wins).
#[derive(Debug, Default)]
pub struct RepositoryRegistry {
    repos: RwLock<BTreeMap<String, RepositoryDescriptor>>,
    journal: Option<Journal>,
}

impl RepositoryRegistry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let entries: Vec<RepositoryDescriptor> = Journal::replay(path.as_ref())?;
        let repos = entries
            .into_iter()
            .map(|d| (d.repository_id.clone(), d))
            .collect();
        Ok(Self {
            repos: RwLock::new(repos),
            journal: Some(Journal::open(path)?),
        })
    }

    pub fn register(&self, desc: RepositoryDescriptor) -> Result<(), GatewayError> {
        desc.validate()?;
        let mut repos = self.repos.write().unwrap();
        if repos.contains_key(&desc.repository_id) {
            return Err(GatewayError::DuplicateRepository(desc.repository_id));
        }
        if let Some(j) = &self.journal {
            j.append(&desc)?;
        }
        repos.insert(desc.repository_id.clone(), desc);
        Ok(())
    }

    /// Replaces the bucket allow list, e.g. after a repository grants access.
    pub fn set_allow_list(
        &self,
        repository_id: &str,
        allow_list: BTreeSet<String>,
    ) -> Result<(), GatewayError> {
        let mut repos = self.repos.write().unwrap();
        let desc = repos
            .get_mut(repository_id)
            .ok_or_else(|| GatewayError::UnknownRepository(repository_id.to_string()))?;
        let Some(bucket) = desc.bucket.as_mut() else {
            return Err(GatewayError::InvalidDescriptor(format!(
                "{repository_id} has no bucket"
            )));
        };
        bucket.allow_list = allow_list;
        if let Some(j) = &self.journal {
            j.append(&*desc)?;
        }
        Ok(())
    }

    pub fn get(&self, repository_id: &str) -> Result<RepositoryDescriptor, GatewayError> {
        self.repos
            .read()
            .unwrap()
            .get(repository_id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownRepository(repository_id.to_string()))
    }

    pub fn contains(&self, repository_id: &str) -> bool {
        self.repos.read().unwrap().contains_key(repository_id)
    }

    pub fn list(&self) -> Vec<RepositoryDescriptor> {
        self.repos.read().unwrap().values().cloned().collect()
    }

    pub fn count(&self) -> usize {
        self.repos.read().unwrap().len()
    }
}
