//! Users, hub-side authorization policies and signed short-lived tokens.
//!
//! Hub roles gate metadata editing only. Access to data is always decided by
//! the owning repository (or its bucket allow list); see `gateway`.

mod policy;
mod token;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use chrono::Duration;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use policy::{ancestors, check_normalized, study_path, AccessPolicy, Role};
pub use token::{Audience, AuthToken, TokenSigner};

use crate::clock::SharedClock;
use crate::journal::{Journal, JournalError};

pub const DEFAULT_MAX_LIFETIME_SECS: i64 = 3600;

pub fn default_grantable_scopes() -> BTreeSet<String> {
    ["read", "write", "data"].map(String::from).into()
}

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("user conflicts with an existing account: {0}")]
    DuplicateUser(String),
    #[error("scope {0:?} is not grantable to this user")]
    ScopeNotGrantable(String),
    #[error("invalid token: {0}")]
    TokenInvalid(String),
    #[error("token expired")]
    Expired,
    #[error("malformed resource path {0:?}")]
    MalformedPath(String),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("token lifetime must be between 1 and {0} seconds")]
    InvalidLifetime(i64),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub user_id: String,
    pub display_name: String,
    pub email: String,
    /// Issuer identifier of the identity provider.
    pub idp: String,
}

impl Principal {
    pub fn new(user_id: &str, idp: &str) -> Self {
        Self {
            user_id: user_id.to_string(),
            display_name: user_id.to_string(),
            email: format!("{user_id}@{idp}"),
            idp: idp.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UserEntry {
    principal: Principal,
    grantable_scopes: BTreeSet<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum AuthJournalEntry {
    User(UserEntry),
    Policy(AccessPolicy),
}

#[derive(Debug, Default)]
struct Users {
    by_id: BTreeMap<String, UserEntry>,
    by_email: BTreeMap<(String, String), String>,
}

#[derive(Debug, Clone)]
pub struct AuthSettings {
    pub signing_key: Vec<u8>,
    pub max_lifetime: Duration,
    /// Seeds token-id generation; `None` uses OS entropy.
    pub seed: Option<u64>,
}

impl AuthSettings {
    pub fn new(signing_key: impl Into<Vec<u8>>) -> Self {
        Self {
            signing_key: signing_key.into(),
            max_lifetime: Duration::seconds(DEFAULT_MAX_LIFETIME_SECS),
            seed: None,
        }
    }
}

#[derive(Debug)]
pub struct AuthService {
    users: RwLock<Users>,
    /// Highest role granted per (user, path).
    policies: RwLock<BTreeMap<(String, String), Role>>,
    signer: TokenSigner,
    max_lifetime: Duration,
    rng: Mutex<ChaCha8Rng>,
    clock: SharedClock,
    journal: Option<Journal>,
}

impl AuthService {
    pub fn in_memory(settings: AuthSettings, clock: SharedClock) -> Self {
        let rng = match settings.seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        Self {
            users: RwLock::default(),
            policies: RwLock::default(),
            signer: TokenSigner::new(settings.signing_key),
            max_lifetime: settings.max_lifetime,
            rng: Mutex::new(rng),
            clock,
            journal: None,
        }
    }

    pub fn open(
        path: impl AsRef<Path>,
        settings: AuthSettings,
        clock: SharedClock,
    ) -> Result<Self, AuthError> {
        let mut svc = Self::in_memory(settings, clock);
        for entry in Journal::replay::<AuthJournalEntry>(path.as_ref())? {
            match entry {
                AuthJournalEntry::User(u) => svc.users.get_mut().unwrap().insert(u),
                AuthJournalEntry::Policy(p) => svc.apply_policy(&p),
            }
        }
        svc.journal = Some(Journal::open(path)?);
        Ok(svc)
    }

    /// Registers a user, or returns the existing account when the same
    /// `(user_id, idp, email)` is presented again.
    pub fn register_user(&self, principal: Principal) -> Result<Principal, AuthError> {
        let mut users = self.users.write().unwrap();
        let email_key = (principal.idp.clone(), principal.email.to_lowercase());
        match (users.by_id.get(&principal.user_id), users.by_email.get(&email_key)) {
            (Some(existing), Some(owner)) if *owner == principal.user_id => {
                return Ok(existing.principal.clone())
            }
            (Some(_), _) => return Err(AuthError::DuplicateUser(principal.user_id)),
            (None, Some(owner)) => {
                return Err(AuthError::DuplicateUser(format!(
                    "{} is already bound to {owner}",
                    principal.email
                )))
            }
            (None, None) => {}
        }
        let entry = UserEntry {
            principal: principal.clone(),
            grantable_scopes: default_grantable_scopes(),
        };
        if let Some(j) = &self.journal {
            j.append(&AuthJournalEntry::User(entry.clone()))?;
        }
        users.insert(entry);
        Ok(principal)
    }

    pub fn user(&self, user_id: &str) -> Result<Principal, AuthError> {
        self.users
            .read()
            .unwrap()
            .by_id
            .get(user_id)
            .map(|u| u.principal.clone())
            .ok_or_else(|| AuthError::UnknownUser(user_id.to_string()))
    }

    pub fn set_grantable_scopes(
        &self,
        user_id: &str,
        scopes: BTreeSet<String>,
    ) -> Result<(), AuthError> {
        let mut users = self.users.write().unwrap();
        let entry = users
            .by_id
            .get_mut(user_id)
            .ok_or_else(|| AuthError::UnknownUser(user_id.to_string()))?;
        entry.grantable_scopes = scopes;
        if let Some(j) = &self.journal {
            j.append(&AuthJournalEntry::User(entry.clone()))?;
        }
        Ok(())
    }

    pub fn issue_token(
        &self,
        user_id: &str,
        scopes: &[String],
        audience: Audience,
    ) -> Result<AuthToken, AuthError> {
        self.issue_token_for(user_id, scopes, audience, self.max_lifetime)
    }

    pub fn issue_token_for(
        &self,
        user_id: &str,
        scopes: &[String],
        audience: Audience,
        lifetime: Duration,
    ) -> Result<AuthToken, AuthError> {
        if lifetime <= Duration::zero() || lifetime > self.max_lifetime {
            return Err(AuthError::InvalidLifetime(self.max_lifetime.num_seconds()));
        }
        {
            let users = self.users.read().unwrap();
            let entry = users
                .by_id
                .get(user_id)
                .ok_or_else(|| AuthError::UnknownUser(user_id.to_string()))?;
            if let Some(bad) = scopes.iter().find(|s| !entry.grantable_scopes.contains(*s)) {
                return Err(AuthError::ScopeNotGrantable(bad.clone()));
            }
        }
        Ok(self.sign(user_id, scopes.to_vec(), audience, lifetime))
    }

    /// A token for analysis environments acting on the user's behalf. It
    /// carries identity only; repositories still decide every data access.
    pub fn workspace_token(&self, user_id: &str) -> Result<AuthToken, AuthError> {
        self.user(user_id)?;
        Ok(self.sign(
            user_id,
            vec!["data".to_string()],
            Audience::Workspace,
            self.max_lifetime,
        ))
    }

    pub fn validate_token(&self, compact: &str) -> Result<AuthToken, AuthError> {
        let token = self.signer.verify(compact)?;
        if token.expires_at - token.issued_at > self.max_lifetime {
            return Err(AuthError::TokenInvalid("lifetime exceeds maximum".into()));
        }
        if self.clock.now() >= token.expires_at {
            return Err(AuthError::Expired);
        }
        Ok(token)
    }

    pub fn grant(&self, policy: AccessPolicy) -> Result<(), AuthError> {
        check_normalized(&policy.resource_path)?;
        self.user(&policy.principal)?;
        if let Some(j) = &self.journal {
            j.append(&AuthJournalEntry::Policy(policy.clone()))?;
        }
        self.apply_policy(&policy);
        Ok(())
    }

    /// True iff `role` or a dominating role is granted on the path or any
    /// ancestor of it.
    pub fn check_access(&self, user_id: &str, path: &str, role: Role) -> Result<bool, AuthError> {
        check_normalized(path)?;
        let policies = self.policies.read().unwrap();
        let mut key = (user_id.to_string(), String::new());
        Ok(ancestors(path).any(|p| {
            key.1.clear();
            key.1.push_str(p);
            policies.get(&key).is_some_and(|granted| *granted >= role)
        }))
    }

    /// Grants held directly on `path` (not inherited).
    pub fn policies_on(&self, path: &str) -> Vec<AccessPolicy> {
        self.policies
            .read()
            .unwrap()
            .iter()
            .filter(|((_, p), _)| p == path)
            .map(|((user, p), role)| AccessPolicy {
                resource_path: p.clone(),
                role: *role,
                principal: user.clone(),
            })
            .collect()
    }

    pub fn user_count(&self) -> usize {
        self.users.read().unwrap().by_id.len()
    }

    fn apply_policy(&self, policy: &AccessPolicy) {
        let mut policies = self.policies.write().unwrap();
        let slot = policies
            .entry((policy.principal.clone(), policy.resource_path.clone()))
            .or_insert(policy.role);
        *slot = (*slot).max(policy.role);
    }

    fn sign(&self, user_id: &str, scopes: Vec<String>, audience: Audience, lifetime: Duration) -> AuthToken {
        let mut id = [0u8; 16];
        self.rng.lock().unwrap().fill_bytes(&mut id);
        let now = self.clock.now();
        self.signer.sign(
            hex::encode(id),
            user_id.to_string(),
            scopes,
            now,
            now + lifetime,
            audience,
        )
    }
}

impl Users {
    fn insert(&mut self, entry: UserEntry) {
        let p = &entry.principal;
        self.by_email
            .insert((p.idp.clone(), p.email.to_lowercase()), p.user_id.clone());
        self.by_id.insert(p.user_id.clone(), entry);
    }
}
