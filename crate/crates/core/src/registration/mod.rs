//! Study registration: claim a seeded study record, link a trial-registry
//! identifier, submit study-level metadata, attach a data dictionary and
//! delegate editing rights.
//!
//! States only move forward along `UNREGISTERED -> CLAIMED ->
//! SLMD_SUBMITTED -> VLMD_ATTACHED`. Each study is guarded by its own lock.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::adapters::{AdapterError, AdapterService, HarvestRun};
use crate::auth::{study_path, AccessPolicy, AuthError, AuthService, Role};
use crate::clock::SharedClock;
use crate::ids::{is_valid_guid, is_valid_nct};
use crate::journal::{Journal, JournalError};
use crate::metadata::{MetadataError, MetadataStore};
use crate::tree::sha256_hex;
use crate::vlmd::{validate_vlmd, DataDictionary};

pub const SLMD_SCHEMA_JSON: &str = include_str!("../../../../schemas/slmd.schema.json");
pub const REGISTRATION_BLOCK: &str = "registration";
pub const GRANT_BLOCK: &str = "grant_source";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StudyState {
    Unregistered,
    Claimed,
    SlmdSubmitted,
    VlmdAttached,
}

impl StudyState {
    pub const ALL: [StudyState; 4] = [
        StudyState::Unregistered,
        StudyState::Claimed,
        StudyState::SlmdSubmitted,
        StudyState::VlmdAttached,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyState::Unregistered => "UNREGISTERED",
            StudyState::Claimed => "CLAIMED",
            StudyState::SlmdSubmitted => "SLMD_SUBMITTED",
            StudyState::VlmdAttached => "VLMD_ATTACHED",
        }
    }
}

impl std::str::FromStr for StudyState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StudyState::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown state {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub guid: String,
    pub award_number: String,
    pub state: StudyState,
    pub owner: Option<String>,
    pub nct_id: Option<String>,
    pub repository_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_token_hash: Option<String>,
}

impl StudyRecord {
    /// The record without its claim-token digest.
    pub fn public(&self) -> Self {
        Self { claim_token_hash: None, ..self.clone() }
    }

    fn block(&self) -> Value {
        let mut m = Map::new();
        m.insert("state".into(), json!(self.state));
        m.insert("award_number".into(), json!(self.award_number));
        for (k, v) in [
            ("owner", &self.owner),
            ("nct_id", &self.nct_id),
            ("repository_id", &self.repository_id),
        ] {
            if let Some(v) = v {
                m.insert(k.into(), json!(v));
            }
        }
        Value::Object(m)
    }
}

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("award {0} is listed more than once or already seeded")]
    DuplicateAward(String),
    #[error("award number {0:?} cannot form a study identifier")]
    InvalidAward(String),
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error("study {0} is already claimed")]
    AlreadyClaimed(String),
    #[error("claim token does not match")]
    BadClaimToken,
    #[error("{user} lacks {role} on {path}")]
    NotAuthorized { user: String, path: String, role: Role },
    #[error("malformed trial identifier {0:?}; expected NCT followed by 8 digits")]
    MalformedNct(String),
    #[error("trial {nct_id} not found at the registry")]
    RegistryMiss { nct_id: String, run: Box<HarvestRun> },
    #[error("schema violation: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error("study is {state:?}; operation requires {required}")]
    WrongState { state: StudyState, required: String },
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("role {0} cannot be delegated")]
    InvalidRole(Role),
    #[error("no trial-registry source configured")]
    NoRegistrySource,
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Auth(AuthError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

impl From<AuthError> for RegistrationError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::UnknownUser(u) => RegistrationError::UnknownUser(u),
            other => RegistrationError::Auth(other),
        }
    }
}

/// The study-level metadata form schema, compiled once.
pub struct SlmdSchema {
    version: String,
    validator: jsonschema::Validator,
    raw: Value,
}

impl std::fmt::Debug for SlmdSchema {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlmdSchema").field("version", &self.version).finish_non_exhaustive()
    }
}

impl SlmdSchema {
    pub fn bundled() -> Arc<Self> {
        let raw = serde_json::from_str(SLMD_SCHEMA_JSON).expect("bundled SLMD schema is JSON");
        Arc::new(Self::from_value(raw).expect("bundled SLMD schema compiles"))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| e.to_string())?;
        Self::from_value(serde_json::from_str(&text).map_err(|e| e.to_string())?)
    }

    pub fn from_value(raw: Value) -> Result<Self, String> {
        let version = raw["version"].as_str().unwrap_or("unversioned").to_string();
        let validator = jsonschema::validator_for(&raw).map_err(|e| e.to_string())?;
        Ok(Self { version, validator, raw })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn document(&self) -> &Value {
        &self.raw
    }

    /// One message per violation, each led by the offending field path.
    pub fn validate(&self, fields: &Value) -> Vec<String> {
        let mut out: Vec<String> = self
            .validator
            .iter_errors(fields)
            .map(|e| {
                let at = e.instance_path().to_string();
                format!("{}: {e}", if at.is_empty() { "/" } else { &at })
            })
            .collect();
        out.sort();
        out
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationSettings {
    /// Adapter source queried when a trial identifier is linked.
    pub trial_source: Option<String>,
    /// Seeds claim-token generation; `None` uses OS entropy.
    pub seed: Option<u64>,
}

impl Default for RegistrationSettings {
    fn default() -> Self {
        Self { trial_source: Some("trial_registry".into()), seed: None }
    }
}

pub struct RegistrationService {
    studies: RwLock<BTreeMap<String, Arc<Mutex<StudyRecord>>>>,
    store: Arc<MetadataStore>,
    auth: Arc<AuthService>,
    adapters: Option<Arc<AdapterService>>,
    schema: Arc<SlmdSchema>,
    settings: RegistrationSettings,
    rng: Mutex<ChaCha8Rng>,
    clock: SharedClock,
    journal: Option<Journal>,
}

impl std::fmt::Debug for RegistrationService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistrationService")
            .field("studies", &self.studies.read().unwrap().len())
            .finish_non_exhaustive()
    }
}

impl RegistrationService {
    pub fn in_memory(
        store: Arc<MetadataStore>,
        auth: Arc<AuthService>,
        adapters: Option<Arc<AdapterService>>,
        schema: Arc<SlmdSchema>,
        settings: RegistrationSettings,
        clock: SharedClock,
    ) -> Self {
        let rng = match settings.seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_os_rng(),
        };
        Self {
            studies: RwLock::default(),
            store,
            auth,
            adapters,
            schema,
            settings,
            rng: Mutex::new(rng),
            clock,
            journal: None,
        }
    }

    /// Journal-backed service. The journal holds record snapshots; the last
    /// snapshot per study wins on replay.
    pub fn open(
        path: impl AsRef<Path>,
        store: Arc<MetadataStore>,
        auth: Arc<AuthService>,
        adapters: Option<Arc<AdapterService>>,
        schema: Arc<SlmdSchema>,
        settings: RegistrationSettings,
        clock: SharedClock,
    ) -> Result<Self, RegistrationError> {
        let mut svc = Self::in_memory(store, auth, adapters, schema, settings, clock);
        let studies = svc.studies.get_mut().unwrap();
        for rec in Journal::replay::<StudyRecord>(path.as_ref())? {
            studies.insert(rec.guid.clone(), Arc::new(Mutex::new(rec)));
        }
        svc.journal = Some(Journal::open(path)?);
        Ok(svc)
    }

    pub fn schema(&self) -> &Arc<SlmdSchema> {
        &self.schema
    }

    pub fn guid_for_award(award_number: &str) -> String {
        format!("heal/{award_number}")
    }

    /// Creates one UNREGISTERED study and its grant block per award. The
    /// whole batch is rejected if any award repeats or already exists.
    pub fn seed_from_awards(
        &self,
        awards: Vec<(String, Value)>,
    ) -> Result<Vec<StudyRecord>, RegistrationError> {
        let mut studies = self.studies.write().unwrap();
        let mut batch = std::collections::BTreeSet::new();
        for (award, _) in &awards {
            let guid = Self::guid_for_award(award);
            if !is_valid_guid(&guid) {
                return Err(RegistrationError::InvalidAward(award.clone()));
            }
            if !batch.insert(guid.clone()) || studies.contains_key(&guid) {
                return Err(RegistrationError::DuplicateAward(award.clone()));
            }
        }
        let mut out = Vec::with_capacity(awards.len());
        for (award, grant) in awards {
            let rec = StudyRecord {
                guid: Self::guid_for_award(&award),
                award_number: award,
                state: StudyState::Unregistered,
                owner: None,
                nct_id: None,
                repository_id: None,
                claim_token_hash: None,
            };
            self.store.upsert_block(&rec.guid, GRANT_BLOCK, grant)?;
            self.persist(&rec)?;
            studies.insert(rec.guid.clone(), Arc::new(Mutex::new(rec.clone())));
            out.push(rec);
        }
        Ok(out)
    }

    /// Issues a fresh single-use claim token; only its digest is kept. A
    /// new token replaces any earlier one.
    pub fn issue_claim_token(&self, admin: &str, guid: &str) -> Result<String, RegistrationError> {
        let entry = self.entry(guid)?;
        self.require(admin, guid, Role::HubAdmin)?;
        let mut rec = entry.lock().unwrap();
        if rec.state != StudyState::Unregistered {
            return Err(RegistrationError::AlreadyClaimed(guid.to_string()));
        }
        let mut raw = [0u8; 24];
        self.rng.lock().unwrap().fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let mut next = rec.clone();
        next.claim_token_hash = Some(sha256_hex(&token));
        self.commit(&mut rec, next)?;
        Ok(token)
    }

    pub fn claim_study(
        &self,
        user_id: &str,
        guid: &str,
        claim_token: &str,
    ) -> Result<StudyRecord, RegistrationError> {
        let entry = self.entry(guid)?;
        let mut rec = entry.lock().unwrap();
        if rec.state != StudyState::Unregistered {
            return Err(RegistrationError::AlreadyClaimed(guid.to_string()));
        }
        if rec.claim_token_hash.as_deref() != Some(sha256_hex(claim_token).as_str()) {
            return Err(RegistrationError::BadClaimToken);
        }
        self.auth.user(user_id)?;
        self.auth.grant(AccessPolicy {
            resource_path: study_path(guid),
            role: Role::StudyAdmin,
            principal: user_id.to_string(),
        })?;
        let mut next = rec.clone();
        next.state = StudyState::Claimed;
        next.owner = Some(user_id.to_string());
        next.claim_token_hash = None;
        self.commit(&mut rec, next)?;
        Ok(rec.public())
    }

    /// Stores the trial identifier, then harvests the registry record for
    /// it. A registry miss keeps the identifier.
    pub fn link_nct(&self, user_id: &str, guid: &str, nct_id: &str) -> Result<HarvestRun, RegistrationError> {
        let entry = self.entry(guid)?;
        self.require(user_id, guid, Role::StudyAdmin)?;
        if !is_valid_nct(nct_id) {
            return Err(RegistrationError::MalformedNct(nct_id.to_string()));
        }
        {
            let mut rec = entry.lock().unwrap();
            at_least(&rec, StudyState::Claimed)?;
            let mut next = rec.clone();
            next.nct_id = Some(nct_id.to_string());
            self.commit(&mut rec, next)?;
        }
        let (Some(adapters), Some(source)) = (&self.adapters, &self.settings.trial_source) else {
            return Err(RegistrationError::NoRegistrySource);
        };
        let run = adapters.harvest_keys(source, &[nct_id.to_string()])?;
        if run.source_failed() || !run.errors.is_empty() || run.created + run.updated + run.unchanged == 0 {
            return Err(RegistrationError::RegistryMiss { nct_id: nct_id.to_string(), run: Box::new(run) });
        }
        Ok(run)
    }

    /// Writes the `slmd` block (always a new version) and advances a
    /// CLAIMED study to SLMD_SUBMITTED.
    pub fn submit_slmd(&self, user_id: &str, guid: &str, fields: Value) -> Result<StudyRecord, RegistrationError> {
        let entry = self.entry(guid)?;
        self.require(user_id, guid, Role::MetadataEditor)?;
        let violations = self.schema.validate(&fields);
        if !violations.is_empty() {
            return Err(RegistrationError::SchemaViolation(violations));
        }
        let mut rec = entry.lock().unwrap();
        at_least(&rec, StudyState::Claimed)?;
        let mut block = fields.as_object().cloned().unwrap_or_default();
        block.insert("schema_version".into(), json!(self.schema.version()));
        block.insert("submitted_by".into(), json!(user_id));
        block.insert("submitted_at".into(), json!(self.clock.now()));
        self.store.update_document(guid, "slmd", Value::Object(block))?;
        if rec.state == StudyState::Claimed {
            let mut next = rec.clone();
            next.state = StudyState::SlmdSubmitted;
            self.commit(&mut rec, next)?;
        }
        Ok(rec.public())
    }

    /// Writes the `vlmd` block and moves the study to VLMD_ATTACHED.
    /// Re-attaching replaces the dictionary.
    pub fn attach_vlmd(
        &self,
        user_id: &str,
        guid: &str,
        dict: &DataDictionary,
    ) -> Result<StudyRecord, RegistrationError> {
        let entry = self.entry(guid)?;
        self.require(user_id, guid, Role::MetadataEditor)?;
        let mut rec = entry.lock().unwrap();
        at_least(&rec, StudyState::SlmdSubmitted)?;
        let violations = validate_vlmd(dict);
        if !violations.is_empty() {
            return Err(RegistrationError::SchemaViolation(
                violations.iter().map(ToString::to_string).collect(),
            ));
        }
        self.store.update_document(guid, "vlmd", dict.study_block())?;
        if rec.state != StudyState::VlmdAttached {
            let mut next = rec.clone();
            next.state = StudyState::VlmdAttached;
            self.commit(&mut rec, next)?;
        }
        Ok(rec.public())
    }

    pub fn delegate(
        &self,
        owner: &str,
        guid: &str,
        delegate_user: &str,
        role: Role,
    ) -> Result<(), RegistrationError> {
        self.entry(guid)?;
        self.require(owner, guid, Role::StudyAdmin)?;
        if !matches!(role, Role::MetadataEditor | Role::StudyAdmin) {
            return Err(RegistrationError::InvalidRole(role));
        }
        self.auth.user(delegate_user)?;
        self.auth.grant(AccessPolicy {
            resource_path: study_path(guid),
            role,
            principal: delegate_user.to_string(),
        })?;
        Ok(())
    }

    /// Declares the repository holding the study's data. Allowed until a
    /// dictionary is attached.
    pub fn set_repository(
        &self,
        user_id: &str,
        guid: &str,
        repository_id: &str,
    ) -> Result<StudyRecord, RegistrationError> {
        let entry = self.entry(guid)?;
        self.require(user_id, guid, Role::StudyAdmin)?;
        let mut rec = entry.lock().unwrap();
        if rec.state >= StudyState::VlmdAttached {
            return Err(RegistrationError::WrongState {
                state: rec.state,
                required: "a state before VLMD_ATTACHED".into(),
            });
        }
        let mut next = rec.clone();
        next.repository_id = Some(repository_id.to_string());
        self.commit(&mut rec, next)?;
        Ok(rec.public())
    }

    pub fn get(&self, guid: &str) -> Result<StudyRecord, RegistrationError> {
        Ok(self.entry(guid)?.lock().unwrap().public())
    }

    /// Studies in guid order, optionally restricted to one state.
    pub fn list(&self, state: Option<StudyState>) -> Vec<StudyRecord> {
        let entries: Vec<_> = self.studies.read().unwrap().values().cloned().collect();
        entries
            .iter()
            .map(|e| e.lock().unwrap().public())
            .filter(|r| state.is_none_or(|s| r.state == s))
            .collect()
    }

    pub fn counts(&self) -> BTreeMap<StudyState, usize> {
        let mut out: BTreeMap<StudyState, usize> = StudyState::ALL.iter().map(|s| (*s, 0)).collect();
        for r in self.list(None) {
            *out.get_mut(&r.state).unwrap() += 1;
        }
        out
    }

    /// Studies at or beyond `state`.
    pub fn count_at_least(&self, state: StudyState) -> usize {
        self.list(None).iter().filter(|r| r.state >= state).count()
    }

    pub fn len(&self) -> usize {
        self.studies.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn entry(&self, guid: &str) -> Result<Arc<Mutex<StudyRecord>>, RegistrationError> {
        self.studies
            .read()
            .unwrap()
            .get(guid)
            .cloned()
            .ok_or_else(|| RegistrationError::UnknownStudy(guid.to_string()))
    }

    fn require(&self, user_id: &str, guid: &str, role: Role) -> Result<(), RegistrationError> {
        let path = study_path(guid);
        if self.auth.check_access(user_id, &path, role)? {
            Ok(())
        } else {
            Err(RegistrationError::NotAuthorized { user: user_id.to_string(), path, role })
        }
    }

    fn persist(&self, rec: &StudyRecord) -> Result<(), RegistrationError> {
        if let Some(j) = &self.journal {
            j.append(rec)?;
        }
        self.store.upsert_block(&rec.guid, REGISTRATION_BLOCK, rec.block())?;
        Ok(())
    }

    fn commit(&self, slot: &mut StudyRecord, next: StudyRecord) -> Result<(), RegistrationError> {
        debug_assert!(next.state >= slot.state, "states only move forward");
        self.persist(&next)?;
        *slot = next;
        Ok(())
    }
}

fn at_least(rec: &StudyRecord, required: StudyState) -> Result<(), RegistrationError> {
    if rec.state >= required {
        Ok(())
    } else {
        Err(RegistrationError::WrongState { state: rec.state, required: format!("at least {}", required.as_str()) })
    }
}

#[cfg(test)]
mod tests;
