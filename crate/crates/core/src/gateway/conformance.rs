use serde::{Deserialize, Serialize};

use super::{ConnectorError, Gateway, GatewayError, RepositoryDescriptor, Tier};
use crate::ids::is_valid_pid;
use crate::pid::{parse_bucket_locator, validate_checksums, AccessKind, DataObjectRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Pass,
    /// Met, with data reached through the bucket fallback.
    PassViaBucket,
    /// Met by hub-minted PIDs and hub-held records.
    HubBacked,
    /// The tier does not offer this capability; the bucket allow list stands in.
    Fallback,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementCheck {
    pub requirement: u8,
    pub title: String,
    pub outcome: CheckOutcome,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub repository_id: String,
    pub tier: Tier,
    pub checks: Vec<RequirementCheck>,
}

impl ConformanceReport {
    pub fn outcomes(&self) -> Vec<CheckOutcome> {
        self.checks.iter().map(|c| c.outcome).collect()
    }
}

const TITLES: [&str; 5] = [
    "objects carry persistent identifiers",
    "metadata retrievable by PID",
    "data access method retrievable by PID",
    "authentication endpoint issues and validates tokens",
    "on-behalf-of access with a workspace token",
];

type Check = (CheckOutcome, String);

fn fail(msg: impl Into<String>) -> Check {
    (CheckOutcome::Fail, msg.into())
}

fn unreachable(e: ConnectorError) -> Check {
    fail(e.to_string())
}

impl Gateway {
    pub fn probe_capabilities(&self, repository_id: &str) -> Result<ConformanceReport, GatewayError> {
        let repo = self.registry.get(repository_id)?;
        let records = self
            .pids
            .list_by_repository(repository_id)
            .map_err(|_| GatewayError::UnknownRepository(repository_id.to_string()))?;
        let checks = match repo.tier {
            Tier::FullApi => [
                self.check_remote_pids(&repo),
                self.check_remote_metadata(&repo, &records),
                self.check_data_endpoint(&repo, &records),
                self.check_auth(&repo),
                self.check_on_behalf_of(&repo, &records),
            ],
            Tier::MetadataOnly => [
                self.check_remote_pids(&repo),
                self.check_remote_metadata(&repo, &records),
                self.check_bucket_locators(&repo, &records, CheckOutcome::PassViaBucket),
                fallback_auth(),
                fallback_on_behalf_of(),
            ],
            Tier::BucketOnly => [
                self.check_hub_pids(&repo, &records),
                check_hub_records(&records),
                self.check_bucket_locators(&repo, &records, CheckOutcome::HubBacked),
                fallback_auth(),
                fallback_on_behalf_of(),
            ],
        };
        Ok(ConformanceReport {
            repository_id: repository_id.to_string(),
            tier: repo.tier,
            checks: checks
                .into_iter()
                .enumerate()
                .map(|(i, (outcome, evidence))| RequirementCheck {
                    requirement: i as u8 + 1,
                    title: TITLES[i].to_string(),
                    outcome,
                    evidence,
                })
                .collect(),
        })
    }

    fn check_remote_pids(&self, repo: &RepositoryDescriptor) -> Check {
        let objects = match self.connector.list_objects(repo) {
            Ok(o) => o,
            Err(e) => return unreachable(e),
        };
        if objects.is_empty() {
            return fail("repository lists no objects");
        }
        let mut bad = Vec::new();
        for o in &objects {
            match &o.pid {
                None => bad.push(format!("{} (no pid)", o.key)),
                Some(pid) if !is_valid_pid(pid) => bad.push(format!("{} (malformed pid {pid})", o.key)),
                Some(_) => {
                    if let Err(e) = validate_checksums(&o.checksums) {
                        bad.push(format!("{} ({e})", o.key));
                    }
                }
            }
        }
        if bad.is_empty() {
            (
                CheckOutcome::Pass,
                format!("{} objects listed, all with well-formed PIDs and checksums", objects.len()),
            )
        } else {
            fail(format!("{} of {} objects invalid: {}", bad.len(), objects.len(), bad.join(", ")))
        }
    }

    fn check_remote_metadata(&self, repo: &RepositoryDescriptor, records: &[DataObjectRecord]) -> Check {
        if records.is_empty() {
            return fail("no PIDs registered for this repository");
        }
        for r in records {
            let doc = match self.connector.object_metadata(repo, &r.pid) {
                Ok(d) => d,
                Err(e) => return fail(format!("{}: {e}", r.pid)),
            };
            if let Some(missing) = repo.sia.minimum_metadata_fields.iter().find(|p| p.get(&doc).is_none()) {
                return fail(format!("{}: minimum field {missing} absent", r.pid));
            }
        }
        (
            CheckOutcome::Pass,
            format!(
                "metadata for {} PIDs carries {} minimum fields",
                records.len(),
                repo.sia.minimum_metadata_fields.len()
            ),
        )
    }

    fn check_data_endpoint(&self, repo: &RepositoryDescriptor, records: &[DataObjectRecord]) -> Check {
        if records.is_empty() {
            return fail("no PIDs registered for this repository");
        }
        for r in records {
            match self.connector.object_access(repo, &r.pid) {
                Ok(methods) if methods.iter().any(|m| m.kind == AccessKind::RepoApi) => {}
                Ok(_) => return fail(format!("{}: no repository access method", r.pid)),
                Err(e) => return fail(format!("{}: {e}", r.pid)),
            }
        }
        (
            CheckOutcome::Pass,
            format!("data endpoint returned access methods for {} PIDs", records.len()),
        )
    }

    fn check_auth(&self, repo: &RepositoryDescriptor) -> Check {
        match self.connector.auth_handshake(repo, &self.probe_user) {
            Ok(()) => (CheckOutcome::Pass, "token issued and validated".into()),
            Err(e) => unreachable(e),
        }
    }

    fn check_on_behalf_of(&self, repo: &RepositoryDescriptor, records: &[DataObjectRecord]) -> Check {
        let Some(locator) = records
            .iter()
            .flat_map(|r| &r.access_methods)
            .find(|m| m.kind == AccessKind::RepoApi)
            .map(|m| m.locator.clone())
        else {
            return fail("no repository-served object to request");
        };
        let token = match self.probe_token() {
            Ok(t) => t,
            Err(e) => return fail(e.to_string()),
        };
        match self.connector.request_access(repo, &locator, &token) {
            Ok(decision) => (
                CheckOutcome::Pass,
                format!("repository accepted the workspace token and decided: {}", decision_name(&decision)),
            ),
            Err(e) => unreachable(e),
        }
    }

    fn check_hub_pids(&self, repo: &RepositoryDescriptor, records: &[DataObjectRecord]) -> Check {
        let Some(bucket) = &repo.bucket else {
            return fail("no bucket");
        };
        let listed = match self.connector.list_bucket(bucket) {
            Ok(l) => l,
            Err(e) => return unreachable(e),
        };
        if listed.is_empty() {
            return fail("bucket is empty");
        }
        let minted: std::collections::BTreeSet<&str> = records
            .iter()
            .flat_map(|r| &r.access_methods)
            .filter_map(|m| parse_bucket_locator(&m.locator))
            .map(|(_, key)| key)
            .collect();
        let missing: Vec<_> = listed.iter().filter(|o| !minted.contains(o.key.as_str())).map(|o| o.key.as_str()).collect();
        if missing.is_empty() {
            (
                CheckOutcome::HubBacked,
                format!("{} bucket objects carry hub-minted PIDs", listed.len()),
            )
        } else {
            fail(format!("bucket objects without a PID: {}", missing.join(", ")))
        }
    }

    fn check_bucket_locators(
        &self,
        repo: &RepositoryDescriptor,
        records: &[DataObjectRecord],
        pass: CheckOutcome,
    ) -> Check {
        let Some(bucket) = &repo.bucket else {
            return fail("no bucket");
        };
        if records.is_empty() {
            return fail("no PIDs registered for this repository");
        }
        let listed = match self.connector.list_bucket(bucket) {
            Ok(l) => l,
            Err(e) => return unreachable(e),
        };
        for r in records {
            let Some((_, key)) = r
                .access_methods
                .iter()
                .filter(|m| m.kind == AccessKind::Bucket)
                .find_map(|m| parse_bucket_locator(&m.locator))
            else {
                return fail(format!("{}: no bucket locator", r.pid));
            };
            if !listed.iter().any(|o| o.key == key) {
                return fail(format!("{}: key {key} not in bucket {}", r.pid, bucket.name));
            }
        }
        (pass, format!("{} PIDs resolve to objects in bucket {}", records.len(), bucket.name))
    }
}

fn check_hub_records(records: &[DataObjectRecord]) -> Check {
    if records.is_empty() {
        return fail("no PIDs registered for this repository");
    }
    match records.iter().find(|r| validate_checksums(&r.checksums).is_err()) {
        Some(r) => fail(format!("{}: invalid checksums", r.pid)),
        None => (
            CheckOutcome::HubBacked,
            format!("{} hub-held object records resolve by PID", records.len()),
        ),
    }
}

fn fallback_auth() -> Check {
    (
        CheckOutcome::Fallback,
        "no repository auth endpoint; hub identity plus bucket allow list".into(),
    )
}

fn fallback_on_behalf_of() -> Check {
    (
        CheckOutcome::Fallback,
        "hub-signed bucket URL issued only to allow-listed users".into(),
    )
}

fn decision_name(d: &super::AccessDecision) -> &'static str {
    match d {
        super::AccessDecision::Granted { .. } => "granted",
        super::AccessDecision::Denied { .. } => "denied",
    }
}
