//! Harvesters that pull records from external sources, map them into the
//! source's own provenance block and write only what changed.

mod harmonize;
mod scrape;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use harmonize::{apply_transform, harmonize, normalize_date, FieldMapping, Transform, TransformFailure};
pub use scrape::ScrapeRules;

use crate::clock::SharedClock;
use crate::ids::{is_valid_block_name, is_valid_guid};
use crate::journal::{Journal, JournalError};
use crate::metadata::{MetadataError, MetadataStore, WriteOutcome};
use crate::tree::{scalar_string, DotPath};

pub const MIN_PRODUCTION_INTERVAL_S: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    GrantRegistry,
    TrialRegistry,
    RepositoryApi,
    Scrape,
}

impl SourceKind {
    pub fn default_block(self) -> &'static str {
        match self {
            SourceKind::GrantRegistry => "grant_source",
            SourceKind::TrialRegistry => "registry_source",
            SourceKind::RepositoryApi => "repository",
            SourceKind::Scrape => "scrape_source",
        }
    }
}

/// How a fetched record finds its document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GuidRule {
    /// `{key}` in the template is replaced by the record key.
    Template { template: String },
    /// Records attach to existing documents whose `link_path` equals the
    /// record key. Such sources are queried key by key.
    Linked { link_path: DotPath },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub kind: SourceKind,
    pub endpoint: String,
    pub mapping: Vec<FieldMapping>,
    pub schedule_interval_s: u64,
    #[serde(default = "enabled")]
    pub enabled: bool,
    /// Provenance block this source owns; defaults by kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    pub key_path: DotPath,
    pub guid: GuidRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scrape: Option<ScrapeRules>,
}

fn enabled() -> bool {
    true
}

impl SourceDescriptor {
    pub fn block(&self) -> &str {
        self.block.as_deref().unwrap_or(self.kind.default_block())
    }

    pub fn validate(&self, production: bool) -> Result<(), AdapterError> {
        let invalid = |m: String| Err(AdapterError::InvalidSource(format!("{}: {m}", self.source_id)));
        if !regex!(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$").is_match(&self.source_id) {
            return invalid("source_id must be alphanumeric with _ . -".into());
        }
        if self.schedule_interval_s == 0 {
            return invalid("schedule_interval_s must be positive".into());
        }
        if production && self.schedule_interval_s < MIN_PRODUCTION_INTERVAL_S {
            return invalid(format!("schedule_interval_s must be at least {MIN_PRODUCTION_INTERVAL_S}"));
        }
        if !is_valid_block_name(self.block()) {
            return invalid(format!("invalid block {:?}", self.block()));
        }
        match (&self.kind, &self.scrape) {
            (SourceKind::Scrape, None) => return invalid("scrape sources need scrape rules".into()),
            (SourceKind::Scrape, Some(rules)) => {
                if let Err(e) = rules.validate() {
                    return invalid(e);
                }
            }
            (_, Some(_)) => return invalid("scrape rules only apply to scrape sources".into()),
            _ => {}
        }
        if let GuidRule::Template { template } = &self.guid {
            if !template.contains("{key}") || !is_valid_guid(&template.replace("{key}", "k")) {
                return invalid(format!("guid template {template:?} must yield a GUID around {{key}}"));
            }
        }
        if self.mapping.is_empty() {
            return Err(AdapterError::InvalidMapping("mapping is empty".into()));
        }
        for m in &self.mapping {
            let (block, _) = m
                .target()
                .map_err(|e| AdapterError::InvalidMapping(format!("{}: {e}", m.target_path)))?;
            if let Some(b) = block {
                if b != self.block() {
                    return Err(AdapterError::InvalidMapping(format!(
                        "{} writes into block {b}, but this source owns {}",
                        m.target_path,
                        self.block()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestError {
    /// `None` for failures of the source as a whole.
    pub record_key: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestRun {
    pub run_id: String,
    pub source_id: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub fetched: u64,
    pub created: u64,
    pub updated: u64,
    pub unchanged: u64,
    pub errors: Vec<HarvestError>,
    /// Transform failures; the affected fields were skipped.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl HarvestRun {
    pub fn record_errors(&self) -> u64 {
        self.errors.iter().filter(|e| e.record_key.is_some()).count() as u64
    }

    /// `fetched = created + updated + unchanged + |record errors|`.
    pub fn accounting_holds(&self) -> bool {
        self.fetched == self.created + self.updated + self.unchanged + self.record_errors()
    }

    pub fn source_failed(&self) -> bool {
        self.errors.iter().any(|e| e.record_key.is_none())
    }
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("source {0} is already registered")]
    DuplicateSource(String),
    #[error("unknown source {0}")]
    UnknownSource(String),
    #[error("source {0} is disabled")]
    Disabled(String),
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

/// Transport for source endpoints: a GET returning the body.
pub trait SourceFetcher: Send + Sync {
    fn get(&self, url: &str) -> Result<String, String>;
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
enum AdapterJournalEntry {
    Source(SourceDescriptor),
    Run(HarvestRun),
}

struct Slot {
    desc: SourceDescriptor,
    running: Mutex<()>,
    last_finished: Mutex<Option<DateTime<Utc>>>,
}

pub struct AdapterService {
    sources: RwLock<BTreeMap<String, Arc<Slot>>>,
    runs: Mutex<Vec<HarvestRun>>,
    run_seq: AtomicU64,
    store: Arc<MetadataStore>,
    fetcher: Arc<dyn SourceFetcher>,
    clock: SharedClock,
    journal: Option<Journal>,
    production: bool,
}

impl std::fmt::Debug for AdapterService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterService")
            .field("sources", &self.sources.read().unwrap().keys().collect::<Vec<_>>())
            .field("production", &self.production)
            .finish_non_exhaustive()
    }
}

type LinkIndex = BTreeMap<String, Vec<String>>;

enum Fetched {
    All(Result<Vec<Value>, String>),
    /// One lookup per key; `None` when the source has no such record.
    Keyed(Vec<(String, Result<Option<Value>, String>)>),
}

impl AdapterService {
    /// `production` enforces the minimum schedule interval.
    pub fn in_memory(
        store: Arc<MetadataStore>,
        fetcher: Arc<dyn SourceFetcher>,
        clock: SharedClock,
        production: bool,
    ) -> Self {
        Self {
            sources: RwLock::default(),
            runs: Mutex::default(),
            run_seq: AtomicU64::new(0),
            store,
            fetcher,
            clock,
            journal: None,
            production,
        }
    }

    pub fn open(
        path: impl AsRef<Path>,
        store: Arc<MetadataStore>,
        fetcher: Arc<dyn SourceFetcher>,
        clock: SharedClock,
        production: bool,
    ) -> Result<Self, AdapterError> {
        let mut svc = Self::in_memory(store, fetcher, clock, production);
        for entry in Journal::replay::<AdapterJournalEntry>(path.as_ref())? {
            match entry {
                AdapterJournalEntry::Source(desc) => {
                    svc.sources.get_mut().unwrap().insert(desc.source_id.clone(), Arc::new(Slot::new(desc)));
                }
                AdapterJournalEntry::Run(run) => {
                    if let Some(slot) = svc.sources.get_mut().unwrap().get(&run.source_id) {
                        *slot.last_finished.lock().unwrap() = Some(run.finished_at);
                    }
                    svc.runs.get_mut().unwrap().push(run);
                }
            }
        }
        *svc.run_seq.get_mut() = svc.runs.get_mut().unwrap().len() as u64;
        svc.journal = Some(Journal::open(path)?);
        Ok(svc)
    }

    pub fn register_source(&self, desc: SourceDescriptor) -> Result<String, AdapterError> {
        desc.validate(self.production)?;
        let mut sources = self.sources.write().unwrap();
        if sources.contains_key(&desc.source_id) {
            return Err(AdapterError::DuplicateSource(desc.source_id));
        }
        if let Some(j) = &self.journal {
            j.append(&AdapterJournalEntry::Source(desc.clone()))?;
        }
        let id = desc.source_id.clone();
        sources.insert(id.clone(), Arc::new(Slot::new(desc)));
        Ok(id)
    }

    pub fn sources(&self) -> Vec<SourceDescriptor> {
        self.sources.read().unwrap().values().map(|s| s.desc.clone()).collect()
    }

    pub fn source(&self, source_id: &str) -> Result<SourceDescriptor, AdapterError> {
        Ok(self.slot(source_id)?.desc.clone())
    }

    /// Runs, oldest first, optionally for one source.
    pub fn runs(&self, source_id: Option<&str>) -> Vec<HarvestRun> {
        self.runs
            .lock()
            .unwrap()
            .iter()
            .filter(|r| source_id.is_none_or(|s| r.source_id == s))
            .cloned()
            .collect()
    }

    /// A full run. Waits if the source is already running.
    pub fn harvest_once(&self, source_id: &str) -> Result<HarvestRun, AdapterError> {
        let slot = self.slot(source_id)?;
        if !slot.desc.enabled {
            return Err(AdapterError::Disabled(source_id.to_string()));
        }
        let _running = slot.running.lock().unwrap();
        self.run_locked(&slot, None)
    }

    /// A run restricted to the given record keys, e.g. right after a study
    /// links a trial identifier.
    pub fn harvest_keys(&self, source_id: &str, keys: &[String]) -> Result<HarvestRun, AdapterError> {
        let slot = self.slot(source_id)?;
        let _running = slot.running.lock().unwrap();
        self.run_locked(&slot, Some(keys))
    }

    /// Starts every enabled source that is due at `now` and not already
    /// running. Distinct sources run in parallel.
    pub fn schedule_tick(&self, now: DateTime<Utc>) -> Vec<HarvestRun> {
        let due: Vec<Arc<Slot>> = self
            .sources
            .read()
            .unwrap()
            .values()
            .filter(|s| s.desc.enabled && s.is_due(now))
            .cloned()
            .collect();
        let mut runs: Vec<HarvestRun> = std::thread::scope(|scope| {
            let handles: Vec<_> = due
                .iter()
                .map(|slot| {
                    scope.spawn(move || {
                        let _running = slot.running.try_lock().ok()?;
                        if !slot.is_due(now) {
                            return None;
                        }
                        match self.run_locked(slot, None) {
                            Ok(run) => Some(run),
                            Err(e) => {
                                log::error!("scheduled run of {} failed: {e}", slot.desc.source_id);
                                None
                            }
                        }
                    })
                })
                .collect();
            handles.into_iter().filter_map(|h| h.join().ok().flatten()).collect()
        });
        runs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        runs
    }

    /// Source ids currently mid-run.
    pub fn busy(&self) -> BTreeSet<String> {
        self.sources
            .read()
            .unwrap()
            .values()
            .filter(|s| s.running.try_lock().is_err())
            .map(|s| s.desc.source_id.clone())
            .collect()
    }

    fn slot(&self, source_id: &str) -> Result<Arc<Slot>, AdapterError> {
        self.sources
            .read()
            .unwrap()
            .get(source_id)
            .cloned()
            .ok_or_else(|| AdapterError::UnknownSource(source_id.to_string()))
    }

    fn run_locked(&self, slot: &Slot, keys: Option<&[String]>) -> Result<HarvestRun, AdapterError> {
        let desc = &slot.desc;
        let started_at = self.clock.now();
        let seq = self.run_seq.fetch_add(1, Ordering::SeqCst) + 1;
        let mut run = HarvestRun {
            run_id: format!("run-{seq:06}"),
            source_id: desc.source_id.clone(),
            started_at,
            finished_at: started_at,
            fetched: 0,
            created: 0,
            updated: 0,
            unchanged: 0,
            errors: Vec::new(),
            warnings: Vec::new(),
        };

        let links = match &desc.guid {
            GuidRule::Linked { link_path } => Some(self.link_index(link_path)),
            GuidRule::Template { .. } => None,
        };
        match self.fetch(desc, keys, links.as_ref()) {
            Fetched::All(Err(e)) => run.errors.push(HarvestError {
                record_key: None,
                message: format!("source unreachable: {e}"),
            }),
            Fetched::All(Ok(records)) => {
                for record in records {
                    run.fetched += 1;
                    let key = desc.key_path.get(&record).and_then(scalar_string);
                    let Some(key) = key else {
                        run.errors.push(HarvestError {
                            record_key: Some(format!("#{}", run.fetched)),
                            message: format!("record has no {}", desc.key_path),
                        });
                        continue;
                    };
                    self.apply(desc, links.as_ref(), &key, &record, &mut run);
                }
            }
            Fetched::Keyed(lookups) => {
                for (key, result) in lookups {
                    run.fetched += 1;
                    match result {
                        Ok(Some(record)) => self.apply(desc, links.as_ref(), &key, &record, &mut run),
                        Ok(None) => run.errors.push(HarvestError {
                            record_key: Some(key),
                            message: "not found at source".into(),
                        }),
                        Err(e) => run.errors.push(HarvestError {
                            record_key: Some(key),
                            message: format!("lookup failed: {e}"),
                        }),
                    }
                }
            }
        }

        run.finished_at = self.clock.now();
        *slot.last_finished.lock().unwrap() = Some(run.finished_at);
        debug_assert!(run.accounting_holds());
        if let Some(j) = &self.journal {
            j.append(&AdapterJournalEntry::Run(run.clone()))?;
        }
        self.runs.lock().unwrap().push(run.clone());
        Ok(run)
    }

    fn fetch(&self, desc: &SourceDescriptor, keys: Option<&[String]>, links: Option<&LinkIndex>) -> Fetched {
        let linked_keys = match (keys, links) {
            (Some(keys), _) => Some(keys.to_vec()),
            (None, Some(links)) => Some(links.keys().cloned().collect()),
            (None, None) => None,
        };
        match linked_keys {
            None => Fetched::All(self.fetch_all(desc, &desc.endpoint)),
            Some(keys) => Fetched::Keyed(
                keys.into_iter()
                    .map(|k| {
                        let url = keyed_url(&desc.endpoint, &k);
                        let found = self.fetch_all(desc, &url).map(|records| {
                            records
                                .into_iter()
                                .find(|r| desc.key_path.get(r).and_then(scalar_string).as_deref() == Some(k.as_str()))
                        });
                        (k, found)
                    })
                    .collect(),
            ),
        }
    }

    fn fetch_all(&self, desc: &SourceDescriptor, url: &str) -> Result<Vec<Value>, String> {
        let body = self.fetcher.get(url)?;
        match &desc.scrape {
            Some(rules) => rules.extract(&body),
            None => match serde_json::from_str(&body) {
                Ok(Value::Array(records)) => Ok(records),
                Ok(_) => Err("expected a JSON list of records".into()),
                Err(e) => Err(format!("invalid JSON: {e}")),
            },
        }
    }

    /// Documents by the value they hold at `link_path`.
    fn link_index(&self, link_path: &DotPath) -> LinkIndex {
        let mut index = LinkIndex::new();
        for doc in self.store.snapshot() {
            if let Some(key) = link_path.get(&doc.payload).and_then(scalar_string) {
                index.entry(key).or_default().push(doc.guid);
            }
        }
        index
    }

    fn targets(&self, desc: &SourceDescriptor, links: Option<&LinkIndex>, key: &str) -> Result<Vec<String>, String> {
        match (&desc.guid, links) {
            (GuidRule::Template { template }, _) => {
                let guid = template.replace("{key}", key);
                if is_valid_guid(&guid) {
                    Ok(vec![guid])
                } else {
                    Err(format!("key {key:?} does not form a valid GUID"))
                }
            }
            (GuidRule::Linked { .. }, links) => links
                .and_then(|l| l.get(key))
                .cloned()
                .ok_or_else(|| format!("no document links {key}")),
        }
    }

    /// Counts once per record even when a linked record lands in several
    /// documents: created beats updated beats unchanged.
    fn apply(&self, desc: &SourceDescriptor, links: Option<&LinkIndex>, key: &str, record: &Value, run: &mut HarvestRun) {
        let guids = match self.targets(desc, links, key) {
            Ok(g) => g,
            Err(message) => {
                run.errors.push(HarvestError {
                    record_key: Some(key.to_string()),
                    message,
                });
                return;
            }
        };
        let (subtree, failures) = harmonize(&desc.mapping, record);
        run.warnings.extend(
            failures
                .into_iter()
                .map(|f| format!("{key}: {} -> {}: {}", f.source_path, f.target_path, f.message)),
        );
        let mut outcome = WriteOutcome::Unchanged;
        for guid in guids {
            match diff_and_apply(&self.store, &guid, desc.block(), subtree.clone()) {
                Ok(o) => outcome = stronger(outcome, o),
                Err(e) => {
                    run.errors.push(HarvestError {
                        record_key: Some(key.to_string()),
                        message: e.to_string(),
                    });
                    return;
                }
            }
        }
        match outcome {
            WriteOutcome::Created => run.created += 1,
            WriteOutcome::Updated => run.updated += 1,
            WriteOutcome::Unchanged => run.unchanged += 1,
        }
    }
}

impl Slot {
    fn new(desc: SourceDescriptor) -> Self {
        Self {
            desc,
            running: Mutex::new(()),
            last_finished: Mutex::new(None),
        }
    }

    fn is_due(&self, now: DateTime<Utc>) -> bool {
        match *self.last_finished.lock().unwrap() {
            None => true,
            Some(t) => now - t >= Duration::seconds(self.desc.schedule_interval_s as i64),
        }
    }
}

fn stronger(a: WriteOutcome, b: WriteOutcome) -> WriteOutcome {
    use WriteOutcome::*;
    match (a, b) {
        (Created, _) | (_, Created) => Created,
        (Updated, _) | (_, Updated) => Updated,
        _ => Unchanged,
    }
}

fn keyed_url(endpoint: &str, key: &str) -> String {
    let sep = if endpoint.contains('?') { '&' } else { '?' };
    let key: String = url::form_urlencoded::byte_serialize(key.as_bytes()).collect();
    format!("{endpoint}{sep}key={key}")
}

/// Writes `subtree` into `block` only when its canonical serialization
/// differs from what is stored.
pub fn diff_and_apply(
    store: &MetadataStore,
    guid: &str,
    block: &str,
    subtree: Value,
) -> Result<WriteOutcome, MetadataError> {
    store.upsert_block(guid, block, subtree).map(|(o, _)| o)
}
