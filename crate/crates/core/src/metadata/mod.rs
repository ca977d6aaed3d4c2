//! Versioned, semi-structured key-value store for aggregated metadata.
//!
//! A document is a JSON object keyed by GUID whose top-level entries are
//! provenance blocks (`grant_source`, `registry_source`, `slmd`, ...).
//! Writes replace one block at a time and bump the version by exactly one.
//! Reads need no credentials.
//!
//! Persistence is an append-only journal of `(guid, version, block,
//! subtree, ts)` lines; the in-memory view is rebuilt by replay.

mod query;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use query::{MetadataQuery, PathFilter, Predicate};


use crate::clock::SharedClock;
use crate::ids::{is_valid_block_name, is_valid_guid};
use crate::journal::{Journal, JournalError};
use crate::tree::{canonical_json, sha256_hex};

/// Upper bound on the canonical size of one document.
pub const MAX_DOCUMENT_BYTES: usize = 1 << 20;
pub const DEFAULT_MAX_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteOutcome {
    Created,
    Updated,
    Unchanged,
}

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("document {0} already exists")]
    DuplicateGuid(String),
    #[error("unknown document {0}")]
    UnknownGuid(String),
    #[error("malformed guid {0:?}")]
    InvalidGuid(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataDocument {
    pub guid: String,
    /// Always a JSON object whose entries are the provenance blocks.
    pub payload: Value,
    pub version: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl MetadataDocument {
    pub fn block(&self, name: &str) -> Option<&Value> {
        self.payload.get(name)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.payload
            .as_object()
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k.as_str(), v)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    guid: String,
    version: u64,
    /// `None` marks the creating write, whose subtree is the whole payload.
    block: Option<String>,
    subtree: Value,
    ts: DateTime<Utc>,
}

#[derive(Debug)]
pub struct MetadataStore {
    docs: RwLock<BTreeMap<String, Arc<Mutex<MetadataDocument>>>>,
    journal: Option<Journal>,
    clock: SharedClock,
    max_limit: usize,
    generation: AtomicU64,
}

impl MetadataStore {
    pub fn in_memory(clock: SharedClock) -> Self {
        Self {
            docs: RwLock::default(),
            journal: None,
            clock,
            max_limit: DEFAULT_MAX_LIMIT,
            generation: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) a journal-backed store and replays it.
    pub fn open(path: impl AsRef<Path>, clock: SharedClock) -> Result<Self, MetadataError> {
        let path = path.as_ref();
        let entries: Vec<JournalEntry> = Journal::replay(path)?;
        let mut docs: BTreeMap<String, MetadataDocument> = BTreeMap::new();
        for (line, e) in entries.into_iter().enumerate() {
            let corrupt = |message: String| {
                MetadataError::Journal(JournalError::Corrupt {
                    path: path.to_path_buf(),
                    line: line + 1,
                    message,
                })
            };
            match e.block {
                None if e.version == 1 && !docs.contains_key(&e.guid) => {
                    if !e.subtree.is_object() {
                        return Err(corrupt("creating write is not an object".into()));
                    }
                    let payload = e.subtree;
                    docs.insert(
                        e.guid.clone(),
                        MetadataDocument {
                            guid: e.guid,
                            payload,
                            version: 1,
                            created_at: e.ts,
                            updated_at: e.ts,
                        },
                    );
                }
                Some(block) => match docs.get_mut(&e.guid) {
                    Some(doc) if e.version == doc.version + 1 => {
                        doc.payload
                            .as_object_mut()
                            .expect("payload is an object")
                            .insert(block, e.subtree);
                        doc.version = e.version;
                        doc.updated_at = e.ts.max(doc.created_at);
                    }
                    _ => return Err(corrupt(format!("out-of-order write to {}", e.guid))),
                },
                None => return Err(corrupt(format!("duplicate create of {}", e.guid))),
            }
        }
        let generation = docs.len() as u64;
        Ok(Self {
            docs: RwLock::new(
                docs.into_iter()
                    .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
                    .collect(),
            ),
            journal: Some(Journal::open(path)?),
            clock,
            max_limit: DEFAULT_MAX_LIMIT,
            generation: AtomicU64::new(generation),
        })
    }

    pub fn with_max_limit(mut self, max_limit: usize) -> Self {
        self.max_limit = max_limit;
        self
    }

    pub fn create_document(
        &self,
        guid: &str,
        payload: Value,
    ) -> Result<MetadataDocument, MetadataError> {
        if !is_valid_guid(guid) {
            return Err(MetadataError::InvalidGuid(guid.to_string()));
        }
        let Value::Object(payload) = payload else {
            return Err(MetadataError::MalformedPayload(
                "payload must be an object of blocks".into(),
            ));
        };
        if let Some(bad) = payload.keys().find(|k| !is_valid_block_name(k)) {
            return Err(MetadataError::MalformedPayload(format!(
                "invalid block name {bad:?}"
            )));
        }
        let payload = Value::Object(payload);
        check_size(&payload)?;

        let mut docs = self.docs.write().unwrap();
        if docs.contains_key(guid) {
            return Err(MetadataError::DuplicateGuid(guid.to_string()));
        }
        let now = self.clock.now();
        let doc = MetadataDocument {
            guid: guid.to_string(),
            payload,
            version: 1,
            created_at: now,
            updated_at: now,
        };
        if let Some(journal) = &self.journal {
            journal.append(&JournalEntry {
                guid: doc.guid.clone(),
                version: 1,
                block: None,
                subtree: doc.payload.clone(),
                ts: now,
            })?;
        }
        docs.insert(guid.to_string(), Arc::new(Mutex::new(doc.clone())));
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(doc)
    }

    /// Replaces one block. Identical content still counts as a write.
    pub fn update_document(
        &self,
        guid: &str,
        block: &str,
        subtree: Value,
    ) -> Result<MetadataDocument, MetadataError> {
        if !is_valid_block_name(block) {
            return Err(MetadataError::MalformedPayload(format!(
                "invalid block name {block:?}"
            )));
        }
        let entry = self.entry(guid)?;
        let mut doc = entry.lock().unwrap();
        self.write_block(&mut doc, block, subtree)?;
        Ok(doc.clone())
    }

    /// Writes `block` only if its canonical serialization would change,
    /// creating the document when absent. Compare and write happen under
    /// the document's lock.
    pub fn upsert_block(
        &self,
        guid: &str,
        block: &str,
        subtree: Value,
    ) -> Result<(WriteOutcome, MetadataDocument), MetadataError> {
        if !is_valid_block_name(block) {
            return Err(MetadataError::MalformedPayload(format!(
                "invalid block name {block:?}"
            )));
        }
        if !self.contains(guid) {
            let mut payload = serde_json::Map::new();
            payload.insert(block.to_string(), subtree.clone());
            match self.create_document(guid, Value::Object(payload)) {
                Ok(doc) => return Ok((WriteOutcome::Created, doc)),
                Err(MetadataError::DuplicateGuid(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let entry = self.entry(guid)?;
        let mut doc = entry.lock().unwrap();
        if doc.block(block).map(canonical_json) == Some(canonical_json(&subtree)) {
            return Ok((WriteOutcome::Unchanged, doc.clone()));
        }
        self.write_block(&mut doc, block, subtree)?;
        Ok((WriteOutcome::Updated, doc.clone()))
    }

    fn write_block(
        &self,
        doc: &mut MetadataDocument,
        block: &str,
        subtree: Value,
    ) -> Result<(), MetadataError> {
        let mut payload = doc.payload.clone();
        payload
            .as_object_mut()
            .expect("payload is an object")
            .insert(block.to_string(), subtree.clone());
        check_size(&payload)?;

        let now = self.clock.now().max(doc.created_at);
        let version = doc.version + 1;
        if let Some(journal) = &self.journal {
            journal.append(&JournalEntry {
                guid: doc.guid.clone(),
                version,
                block: Some(block.to_string()),
                subtree,
                ts: now,
            })?;
        }
        doc.payload = payload;
        doc.version = version;
        doc.updated_at = now;
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    pub fn get_document(&self, guid: &str) -> Result<MetadataDocument, MetadataError> {
        let entry = self.entry(guid)?;
        let doc = entry.lock().unwrap().clone();
        Ok(doc)
    }

    pub fn contains(&self, guid: &str) -> bool {
        self.docs.read().unwrap().contains_key(guid)
    }

    /// Filters (conjunction of path predicates, then free text), orders by
    /// guid ascending, then paginates.
    pub fn query_documents(
        &self,
        query: &MetadataQuery,
    ) -> Result<Vec<MetadataDocument>, MetadataError> {
        let limit = query.limit.unwrap_or(self.max_limit);
        if limit > self.max_limit {
            return Err(MetadataError::InvalidQuery(format!(
                "limit {limit} exceeds maximum {}",
                self.max_limit
            )));
        }
        let entries: Vec<_> = self.docs.read().unwrap().values().cloned().collect();
        Ok(entries
            .iter()
            .filter_map(|e| {
                let doc = e.lock().unwrap();
                query.matches(&doc.payload).then(|| doc.clone())
            })
            .skip(query.offset)
            .take(limit)
            .collect())
    }

    /// Every document, guid-ascending.
    pub fn snapshot(&self) -> Vec<MetadataDocument> {
        let entries: Vec<_> = self.docs.read().unwrap().values().cloned().collect();
        entries.iter().map(|e| e.lock().unwrap().clone()).collect()
    }

    pub fn count(&self) -> usize {
        self.docs.read().unwrap().len()
    }

    /// Counts successful writes; lets readers detect staleness cheaply.
    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::SeqCst)
    }

    /// SHA-256 over every `(guid, canonical payload)` pair in guid order.
    /// Versions and timestamps are excluded.
    pub fn content_hash(&self) -> String {
        let mut buf = String::new();
        for doc in self.snapshot() {
            buf.push_str(&doc.guid);
            buf.push('\n');
            buf.push_str(&canonical_json(&doc.payload));
            buf.push('\n');
        }
        sha256_hex(buf)
    }

    pub fn max_limit(&self) -> usize {
        self.max_limit
    }

    fn entry(&self, guid: &str) -> Result<Arc<Mutex<MetadataDocument>>, MetadataError> {
        self.docs
            .read()
            .unwrap()
            .get(guid)
            .cloned()
            .ok_or_else(|| MetadataError::UnknownGuid(guid.to_string()))
    }
}

fn check_size(payload: &Value) -> Result<(), MetadataError> {
    let size = canonical_json(payload).len();
    if size > MAX_DOCUMENT_BYTES {
        return Err(MetadataError::MalformedPayload(format!(
            "document is {size} bytes, limit is {MAX_DOCUMENT_BYTES}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
