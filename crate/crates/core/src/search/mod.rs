//! Faceted and free-text search over the metadata store, and the live
//! platform overview counts.
//!
//! The index is an immutable snapshot; a rebuild swaps in a new `Arc`, so a
//! search sees whichever snapshot was current when it started.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::SharedClock;
use crate::gateway::RepositoryRegistry;
use crate::metadata::{MetadataDocument, MetadataStore};
use crate::pid::PidIndex;
use crate::registration::{RegistrationService, StudyState};
use crate::tree::{for_each_string, scalar_string, DotPath};

pub const MISSING: &str = "(missing)";
pub const DEFAULT_FACETS_JSON: &str = include_str!("../../../../config/facets.json");
pub const DEFAULT_DEBOUNCE_SECS: i64 = 5;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("unknown facet {0:?}")]
    UnknownFacet(String),
    #[error("invalid facet configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetConfig {
    pub facet_name: String,
    pub source_path: DotPath,
    #[serde(default)]
    pub multi_valued: bool,
}

pub fn default_facets() -> Vec<FacetConfig> {
    parse_facets(DEFAULT_FACETS_JSON).expect("bundled facet config")
}

pub fn parse_facets(text: &str) -> Result<Vec<FacetConfig>, SearchError> {
    let facets: Vec<FacetConfig> =
        serde_json::from_str(text).map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
    let mut seen = BTreeSet::new();
    if let Some(dup) = facets.iter().find(|f| !seen.insert(f.facet_name.as_str())) {
        return Err(SearchError::InvalidConfig(format!("duplicate facet {}", dup.facet_name)));
    }
    Ok(facets)
}

pub fn load_facets(path: impl AsRef<Path>) -> Result<Vec<FacetConfig>, SearchError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
    parse_facets(&text)
}

/// Lowercase, split on non-alphanumerics, drop tokens shorter than 2.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
}

/// Tokens of every string leaf in the document.
pub fn document_tokens(payload: &Value) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for_each_string(payload, &mut |s| out.extend(tokenize(s)));
    out
}

/// Facet values of one document. Absent, null or non-scalar values fall
/// into the `(missing)` bucket.
pub fn facet_values(facet: &FacetConfig, payload: &Value) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    match facet.source_path.get(payload) {
        Some(Value::Array(items)) if facet.multi_valued => {
            out.extend(items.iter().filter_map(scalar_string));
        }
        Some(v) => out.extend(scalar_string(v)),
        None => {}
    }
    if out.is_empty() {
        out.insert(MISSING.to_string());
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchIndex {
    pub token_postings: BTreeMap<String, BTreeSet<String>>,
    pub facet_values: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    pub built_at: DateTime<Utc>,
    pub doc_count: usize,
    /// Store generation the index was built from.
    pub generation: u64,
    /// Documents skipped because their payload was not an object.
    pub skipped: usize,
    #[serde(skip)]
    guids: BTreeSet<String>,
    #[serde(skip)]
    facets: Vec<FacetConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub text: Option<String>,
    /// OR within a facet, AND across facets.
    pub facets: BTreeMap<String, Vec<String>>,
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

impl SearchQuery {
    pub fn text(text: &str) -> Self {
        Self { text: Some(text.to_string()), ..Self::default() }
    }

    pub fn facet(mut self, name: &str, value: &str) -> Self {
        self.facets.entry(name.to_string()).or_default().push(value.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub guids: Vec<String>,
    pub total: usize,
}

impl SearchIndex {
    pub fn build(docs: &[MetadataDocument], facets: &[FacetConfig], built_at: DateTime<Utc>, generation: u64) -> Self {
        let mut index = SearchIndex {
            token_postings: BTreeMap::new(),
            facet_values: facets.iter().map(|f| (f.facet_name.clone(), BTreeMap::new())).collect(),
            built_at,
            doc_count: 0,
            generation,
            skipped: 0,
            guids: BTreeSet::new(),
            facets: facets.to_vec(),
        };
        for doc in docs {
            if !doc.payload.is_object() {
                index.skipped += 1;
                continue;
            }
            index.doc_count += 1;
            index.guids.insert(doc.guid.clone());
            for token in document_tokens(&doc.payload) {
                index.token_postings.entry(token).or_default().insert(doc.guid.clone());
            }
            for f in facets {
                let slot = index.facet_values.get_mut(&f.facet_name).unwrap();
                for v in facet_values(f, &doc.payload) {
                    slot.entry(v).or_default().insert(doc.guid.clone());
                }
            }
        }
        if index.skipped > 0 {
            log::warn!("search index skipped {} malformed documents", index.skipped);
        }
        index
    }

    pub fn facets(&self) -> &[FacetConfig] {
        &self.facets
    }

    /// Every guid matching the text and facet criteria, ascending.
    fn matching(&self, query: &SearchQuery) -> Result<BTreeSet<String>, SearchError> {
        for name in query.facets.keys() {
            if !self.facet_values.contains_key(name) {
                return Err(SearchError::UnknownFacet(name.clone()));
            }
        }
        let mut acc: Option<BTreeSet<String>> = None;
        let mut narrow = |set: BTreeSet<String>| {
            acc = Some(match acc.take() {
                None => set,
                Some(prev) => prev.intersection(&set).cloned().collect(),
            });
        };
        if let Some(text) = &query.text {
            for token in tokenize(text).collect::<BTreeSet<_>>() {
                narrow(self.token_postings.get(&token).cloned().unwrap_or_default());
            }
        }
        for (name, values) in &query.facets {
            let buckets = &self.facet_values[name];
            let union = values
                .iter()
                .filter_map(|v| buckets.get(v))
                .flat_map(|s| s.iter().cloned())
                .collect();
            narrow(union);
        }
        Ok(acc.unwrap_or_else(|| self.guids.clone()))
    }

    pub fn search(&self, query: &SearchQuery) -> Result<SearchResult, SearchError> {
        let all = self.matching(query)?;
        let total = all.len();
        let guids = all
            .into_iter()
            .skip(query.offset)
            .take(query.limit.unwrap_or(usize::MAX))
            .collect();
        Ok(SearchResult { guids, total })
    }

    /// Value counts within the current result set, per facet.
    pub fn facet_counts(
        &self,
        query: &SearchQuery,
    ) -> Result<BTreeMap<String, BTreeMap<String, usize>>, SearchError> {
        let hits = self.matching(query)?;
        Ok(self
            .facet_values
            .iter()
            .map(|(name, buckets)| {
                let counts = buckets
                    .iter()
                    .map(|(v, guids)| (v.clone(), guids.intersection(&hits).count()))
                    .filter(|(_, n)| *n > 0)
                    .collect();
                (name.clone(), counts)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverviewStats {
    pub searchable_studies: usize,
    pub connected_repositories: usize,
    pub registered_studies: usize,
    pub studies_with_slmd: usize,
    pub studies_with_vlmd: usize,
    pub available_datasets: usize,
}

/// Counted from the live stores, never from the index.
pub fn overview_stats(
    store: &MetadataStore,
    registration: &RegistrationService,
    repositories: &RepositoryRegistry,
    pids: &PidIndex,
) -> OverviewStats {
    let studies = registration.list(None);
    let at_least = |s: StudyState| studies.iter().filter(|r| r.state >= s).count();
    OverviewStats {
        searchable_studies: store.count(),
        connected_repositories: repositories.count(),
        registered_studies: at_least(StudyState::Claimed),
        studies_with_slmd: at_least(StudyState::SlmdSubmitted),
        studies_with_vlmd: at_least(StudyState::VlmdAttached),
        available_datasets: pids.count(),
    }
}

/// Holds the current index and rebuilds it after store writes settle.
pub struct SearchService {
    store: Arc<MetadataStore>,
    facets: Vec<FacetConfig>,
    current: RwLock<Arc<SearchIndex>>,
    debounce: Duration,
    /// Last store generation seen and when it was first seen.
    observed: Mutex<(u64, DateTime<Utc>)>,
    rebuild_lock: Mutex<()>,
    clock: SharedClock,
}

impl std::fmt::Debug for SearchService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SearchService").field("facets", &self.facets).finish_non_exhaustive()
    }
}

impl SearchService {
    pub fn new(store: Arc<MetadataStore>, facets: Vec<FacetConfig>, clock: SharedClock) -> Self {
        let now = clock.now();
        let index = SearchIndex::build(&store.snapshot(), &facets, now, store.generation());
        let generation = index.generation;
        Self {
            store,
            facets,
            current: RwLock::new(Arc::new(index)),
            debounce: Duration::seconds(DEFAULT_DEBOUNCE_SECS),
            observed: Mutex::new((generation, now)),
            rebuild_lock: Mutex::new(()),
            clock,
        }
    }

    pub fn with_debounce(mut self, debounce: Duration) -> Self {
        self.debounce = debounce;
        self
    }

    pub fn index(&self) -> Arc<SearchIndex> {
        self.current.read().unwrap().clone()
    }

    pub fn facets(&self) -> &[FacetConfig] {
        &self.facets
    }

    pub fn rebuild_index(&self) -> Arc<SearchIndex> {
        let _guard = self.rebuild_lock.lock().unwrap();
        let generation = self.store.generation();
        let index = Arc::new(SearchIndex::build(&self.store.snapshot(), &self.facets, self.clock.now(), generation));
        *self.current.write().unwrap() = index.clone();
        index
    }

    /// Rebuilds once the store has been quiet for the debounce window.
    /// Returns true when a rebuild happened.
    pub fn tick(&self) -> bool {
        let now = self.clock.now();
        let generation = self.store.generation();
        let quiet_since = {
            let mut seen = self.observed.lock().unwrap();
            if seen.0 != generation {
                *seen = (generation, now);
            }
            seen.1
        };
        if self.index().generation == generation || now - quiet_since < self.debounce {
            return false;
        }
        self.rebuild_index();
        true
    }

    pub fn search(&self, query: &SearchQuery) -> Result<SearchResult, SearchError> {
        self.index().search(query)
    }

    pub fn facet_counts(&self, query: &SearchQuery) -> Result<BTreeMap<String, BTreeMap<String, usize>>, SearchError> {
        self.index().facet_counts(query)
    }
}
