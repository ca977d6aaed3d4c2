//! Persistent identifiers for data objects.
//!
//! A PID is `prefix/uuid-v4`. Each record carries checksums, a size and the
//! ways to reach the object; the hub never holds the bytes. Records are
//! immutable after minting except for their access methods, which a
//! repository may rotate.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::clock::SharedClock;
use crate::gateway::{RepositoryRegistry, Tier};
use crate::ids::{is_valid_pid, is_valid_prefix};
use crate::journal::{Journal, JournalError};

pub const DEFAULT_PREFIX: &str = "heal";

#[derive(Debug, Error)]
pub enum PidError {
    #[error("unknown repository {0}")]
    UnknownRepository(String),
    #[error("invalid checksum: {0}")]
    InvalidChecksum(String),
    #[error("at least one access method is required")]
    NoAccessMethod,
    #[error("invalid access method: {0}")]
    InvalidAccessMethod(String),
    #[error("unknown pid {0}")]
    UnknownPid(String),
    #[error("malformed pid {0:?}")]
    MalformedPid(String),
    #[error("invalid pid prefix {0:?}")]
    InvalidPrefix(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    RepoApi,
    Bucket,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessMethod {
    pub kind: AccessKind,
    /// A URL for `repo_api`, `bucket://name/key` for `bucket`.
    pub locator: String,
    pub requires_authorization: bool,
}

impl AccessMethod {
    pub fn repo_api(locator: impl Into<String>, requires_authorization: bool) -> Self {
        Self {
            kind: AccessKind::RepoApi,
            locator: locator.into(),
            requires_authorization,
        }
    }

    pub fn bucket(bucket: &str, key: &str, requires_authorization: bool) -> Self {
        Self {
            kind: AccessKind::Bucket,
            locator: format!("bucket://{bucket}/{key}"),
            requires_authorization,
        }
    }
}

/// Splits `bucket://name/key` into `(name, key)`.
pub fn parse_bucket_locator(locator: &str) -> Option<(&str, &str)> {
    let rest = locator.strip_prefix("bucket://")?;
    let (name, key) = rest.split_once('/')?;
    (!name.is_empty() && !key.is_empty()).then_some((name, key))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataObjectRecord {
    pub pid: String,
    pub size_bytes: u64,
    pub checksums: BTreeMap<String, String>,
    pub access_methods: Vec<AccessMethod>,
    pub repository_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum PidJournalEntry {
    Mint {
        record: DataObjectRecord,
    },
    AccessMethods {
        pid: String,
        access_methods: Vec<AccessMethod>,
        ts: DateTime<Utc>,
    },
}

fn expected_digest_len(algorithm: &str) -> Option<usize> {
    match algorithm {
        "md5" => Some(32),
        "sha1" => Some(40),
        "sha256" => Some(64),
        "sha512" => Some(128),
        _ => None,
    }
}

pub fn validate_checksums(checksums: &BTreeMap<String, String>) -> Result<(), PidError> {
    if !checksums.contains_key("md5") && !checksums.contains_key("sha256") {
        return Err(PidError::InvalidChecksum(
            "an md5 or sha256 digest is required".into(),
        ));
    }
    for (alg, digest) in checksums {
        let len = expected_digest_len(alg)
            .ok_or_else(|| PidError::InvalidChecksum(format!("unsupported algorithm {alg:?}")))?;
        if digest.len() != len {
            return Err(PidError::InvalidChecksum(format!(
                "{alg} digest must be {len} hex characters, got {}",
                digest.len()
            )));
        }
        if !digest.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(PidError::InvalidChecksum(format!(
                "{alg} digest is not lowercase hex"
            )));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct PidIndex {
    prefix: String,
    rng: Mutex<ChaCha8Rng>,
    records: RwLock<BTreeMap<String, DataObjectRecord>>,
    repositories: Arc<RepositoryRegistry>,
    journal: Option<Journal>,
    clock: SharedClock,
}

impl PidIndex {
    /// `seed` makes the PID sequence reproducible; `None` seeds from the OS.
    pub fn in_memory(
        prefix: &str,
        seed: Option<u64>,
        repositories: Arc<RepositoryRegistry>,
        clock: SharedClock,
    ) -> Result<Self, PidError> {
        if !is_valid_prefix(prefix) {
            return Err(PidError::InvalidPrefix(prefix.to_string()));
        }
        let rng = match seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        Ok(Self {
            prefix: prefix.to_string(),
            rng: Mutex::new(rng),
            records: RwLock::default(),
            repositories,
            journal: None,
            clock,
        })
    }

    pub fn open(
        path: impl AsRef<Path>,
        prefix: &str,
        seed: Option<u64>,
        repositories: Arc<RepositoryRegistry>,
        clock: SharedClock,
    ) -> Result<Self, PidError> {
        let mut index = Self::in_memory(prefix, seed, repositories, clock)?;
        let entries: Vec<PidJournalEntry> = Journal::replay(path.as_ref())?;
        {
            let records = index.records.get_mut().unwrap();
            for entry in entries {
                match entry {
                    PidJournalEntry::Mint { record } => {
                        records.insert(record.pid.clone(), record);
                    }
                    PidJournalEntry::AccessMethods {
                        pid,
                        access_methods,
                        ..
                    } => {
                        if let Some(r) = records.get_mut(&pid) {
                            r.access_methods = access_methods;
                        }
                    }
                }
            }
        }
        index.journal = Some(Journal::open(path)?);
        Ok(index)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn mint_pid(
        &self,
        repository_id: &str,
        size_bytes: u64,
        checksums: BTreeMap<String, String>,
        access_methods: Vec<AccessMethod>,
    ) -> Result<DataObjectRecord, PidError> {
        let repo = self
            .repositories
            .get(repository_id)
            .map_err(|_| PidError::UnknownRepository(repository_id.to_string()))?;
        validate_checksums(&checksums)?;
        validate_access_methods(&access_methods, repo.tier, repo.bucket.as_ref().map(|b| b.name.as_str()))?;

        let created_at = self.clock.now();
        let mut records = self.records.write().unwrap();
        let pid = loop {
            let candidate = format!("{}/{}", self.prefix, self.next_uuid());
            if !records.contains_key(&candidate) {
                break candidate;
            }
        };
        let record = DataObjectRecord {
            pid: pid.clone(),
            size_bytes,
            checksums,
            access_methods,
            repository_id: repository_id.to_string(),
            created_at,
        };
        if let Some(j) = &self.journal {
            j.append(&PidJournalEntry::Mint {
                record: record.clone(),
            })?;
        }
        records.insert(pid, record.clone());
        Ok(record)
    }

    pub fn resolve_pid(&self, pid: &str) -> Result<DataObjectRecord, PidError> {
        if !is_valid_pid(pid) {
            return Err(PidError::MalformedPid(pid.to_string()));
        }
        self.records
            .read()
            .unwrap()
            .get(pid)
            .cloned()
            .ok_or_else(|| PidError::UnknownPid(pid.to_string()))
    }

    /// Atomically swaps the access methods of an existing record.
    pub fn replace_access_methods(
        &self,
        pid: &str,
        access_methods: Vec<AccessMethod>,
    ) -> Result<DataObjectRecord, PidError> {
        if !is_valid_pid(pid) {
            return Err(PidError::MalformedPid(pid.to_string()));
        }
        let mut records = self.records.write().unwrap();
        let record = records
            .get_mut(pid)
            .ok_or_else(|| PidError::UnknownPid(pid.to_string()))?;
        let repo = self
            .repositories
            .get(&record.repository_id)
            .map_err(|_| PidError::UnknownRepository(record.repository_id.clone()))?;
        validate_access_methods(&access_methods, repo.tier, repo.bucket.as_ref().map(|b| b.name.as_str()))?;
        if let Some(j) = &self.journal {
            j.append(&PidJournalEntry::AccessMethods {
                pid: pid.to_string(),
                access_methods: access_methods.clone(),
                ts: self.clock.now(),
            })?;
        }
        record.access_methods = access_methods;
        Ok(record.clone())
    }

    /// Records owned by one repository, pid-ascending.
    pub fn list_by_repository(&self, repository_id: &str) -> Result<Vec<DataObjectRecord>, PidError> {
        if !self.repositories.contains(repository_id) {
            return Err(PidError::UnknownRepository(repository_id.to_string()));
        }
        Ok(self
            .records
            .read()
            .unwrap()
            .values()
            .filter(|r| r.repository_id == repository_id)
            .cloned()
            .collect())
    }

    pub fn all(&self) -> Vec<DataObjectRecord> {
        self.records.read().unwrap().values().cloned().collect()
    }

    pub fn count(&self) -> usize {
        self.records.read().unwrap().len()
    }

    fn next_uuid(&self) -> Uuid {
        let mut bytes = [0u8; 16];
        self.rng.lock().unwrap().fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid()
    }
}

fn validate_access_methods(
    methods: &[AccessMethod],
    tier: Tier,
    bucket_name: Option<&str>,
) -> Result<(), PidError> {
    if methods.is_empty() {
        return Err(PidError::NoAccessMethod);
    }
    for m in methods {
        if m.locator.trim().is_empty() {
            return Err(PidError::InvalidAccessMethod("empty locator".into()));
        }
        if m.kind == AccessKind::Bucket {
            if !tier.uses_bucket() {
                return Err(PidError::InvalidAccessMethod(format!(
                    "bucket access is not permitted for {} repositories",
                    tier.as_str()
                )));
            }
            let (name, _) = parse_bucket_locator(&m.locator).ok_or_else(|| {
                PidError::InvalidAccessMethod(format!("{:?} is not bucket://name/key", m.locator))
            })?;
            if Some(name) != bucket_name {
                return Err(PidError::InvalidAccessMethod(format!(
                    "bucket {name:?} does not belong to the repository"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
