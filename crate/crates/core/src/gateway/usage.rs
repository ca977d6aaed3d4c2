use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::journal::{Journal, JournalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageAction {
    Resolved,
    UrlIssued,
    Denied,
}

impl UsageAction {
    pub const ALL: [UsageAction; 3] = [UsageAction::Resolved, UsageAction::UrlIssued, UsageAction::Denied];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub event_id: String,
    pub pid: String,
    pub user_id: String,
    pub repository_id: String,
    pub timestamp: DateTime<Utc>,
    pub action: UsageAction,
}

/// Per-repository, per-day report. User ids are reported verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageDigest {
    pub repository_id: String,
    pub day: NaiveDate,
    pub counts: BTreeMap<UsageAction, u64>,
    pub by_user: BTreeMap<String, Vec<UsageEvent>>,
}

impl UsageDigest {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn idempotency_key(&self) -> String {
        idempotency_key(&self.repository_id, self.day)
    }
}

pub fn idempotency_key(repository_id: &str, day: NaiveDate) -> String {
    format!("{repository_id}:{day}")
}

/// Append-only event log.
#[derive(Debug, Default)]
pub struct UsageLog {
    events: Mutex<Vec<UsageEvent>>,
    journal: Option<Journal>,
}

impl UsageLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        let events = Journal::replay(path.as_ref())?;
        Ok(Self {
            events: Mutex::new(events),
            journal: Some(Journal::open(path)?),
        })
    }

    pub fn record(
        &self,
        pid: &str,
        user_id: &str,
        repository_id: &str,
        action: UsageAction,
        timestamp: DateTime<Utc>,
    ) -> Result<UsageEvent, JournalError> {
        let mut events = self.events.lock().unwrap();
        let event = UsageEvent {
            event_id: format!("ev-{:08}", events.len() + 1),
            pid: pid.to_string(),
            user_id: user_id.to_string(),
            repository_id: repository_id.to_string(),
            timestamp,
            action,
        };
        if let Some(j) = &self.journal {
            j.append(&event)?;
        }
        events.push(event.clone());
        Ok(event)
    }

    pub fn events(&self) -> Vec<UsageEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Days that have at least one event, ascending.
    pub fn days(&self) -> Vec<NaiveDate> {
        let mut days: Vec<_> = self
            .events
            .lock()
            .unwrap()
            .iter()
            .map(|e| e.timestamp.date_naive())
            .collect();
        days.sort();
        days.dedup();
        days
    }

    pub fn digest(&self, repository_id: &str, day: NaiveDate) -> UsageDigest {
        let mut counts: BTreeMap<_, _> = UsageAction::ALL.iter().map(|a| (*a, 0)).collect();
        let mut by_user: BTreeMap<String, Vec<UsageEvent>> = BTreeMap::new();
        for e in self.events.lock().unwrap().iter() {
            if e.repository_id == repository_id && e.timestamp.date_naive() == day {
                *counts.get_mut(&e.action).unwrap() += 1;
                by_user.entry(e.user_id.clone()).or_default().push(e.clone());
            }
        }
        UsageDigest {
            repository_id: repository_id.to_string(),
            day,
            counts,
            by_user,
        }
    }
}
