//! JSON scenario scripts: a list of steps run against a fresh mesh, ending
//! in one or more `assert` steps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use meshhub_core::gateway::{Tier, UsageAction};
use meshhub_core::vlmd::{infer_from_csv_bytes, InferOptions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_invariants, seed_fixture, HarnessError, Mesh, MeshOptions, Profile, Reply};
use crate::mock::MockObject;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub steps: Vec<StepSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StepSpec {
    #[serde(flatten)]
    pub step: Step,
    /// The step must fail with this API error code (`"any"` for any
    /// failure).
    #[serde(default)]
    pub expect_error: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub key: String,
    pub size_bytes: u64,
    #[serde(default)]
    pub controlled: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepoSpec {
    pub id: String,
    pub tier: Tier,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub allow_list: BTreeSet<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    /// A named profile, or an inline mesh.
    Seed {
        #[serde(default)]
        profile: Option<String>,
        #[serde(default)]
        repositories: Vec<RepoSpec>,
        #[serde(default)]
        awards: Vec<String>,
    },
    /// `{sources}` anywhere in the descriptor becomes the mock source base
    /// URL. `records` are served at `{sources}/mock/{source_id}/records`.
    RegisterSource {
        source: Value,
        #[serde(default)]
        records: Option<Vec<Value>>,
    },
    SetRecords {
        source_id: String,
        records: Vec<Value>,
    },
    Harvest {
        source_id: String,
    },
    Claim {
        user: String,
        guid: String,
    },
    LinkNct {
        user: String,
        guid: String,
        nct_id: String,
    },
    SubmitSlmd {
        user: String,
        guid: String,
        fields: Value,
    },
    SetRepository {
        user: String,
        guid: String,
        repository: String,
    },
    /// The dictionary is inferred from `csv` and posted to the study.
    AttachVlmd {
        user: String,
        guid: String,
        csv: String,
    },
    FetchUrl {
        user: String,
        repository: String,
        key: String,
        expect: FetchExpect,
        #[serde(default)]
        download: bool,
    },
    Tick {
        seconds: u64,
    },
    FailReports {
        repository: String,
        count: u32,
    },
    DeliverReports,
    Assert {
        checks: Vec<Check>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchExpect {
    Issued,
    Denied,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    SearchHits {
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        facets: BTreeMap<String, Vec<String>>,
        #[serde(default)]
        total: Option<usize>,
        #[serde(default)]
        includes: Vec<String>,
    },
    StudyState {
        guid: String,
        state: String,
    },
    /// Today's digest for one repository.
    UsageCounts {
        repository: String,
        #[serde(default)]
        resolved: Option<u64>,
        #[serde(default)]
        url_issued: Option<u64>,
        #[serde(default)]
        denied: Option<u64>,
    },
    Stats {
        expect: BTreeMap<String, u64>,
    },
    DiskDeltaBelow {
        bytes: u64,
    },
    BytesMovedAtLeast {
        bytes: u64,
    },
    HarvestAccounting,
    /// Digests account for every usage event, and each sink holds exactly
    /// the digests the hub computes.
    DigestConservation,
    Invariants,
}

impl Check {
    fn name(&self) -> &'static str {
        match self {
            Check::SearchHits { .. } => "search_hits",
            Check::StudyState { .. } => "study_state",
            Check::UsageCounts { .. } => "usage_counts",
            Check::Stats { .. } => "stats",
            Check::DiskDeltaBelow { .. } => "disk_delta_below",
            Check::BytesMovedAtLeast { .. } => "bytes_moved_at_least",
            Check::HarvestAccounting => "harvest_accounting",
            Check::DigestConservation => "digest_conservation",
            Check::Invariants => "invariants",
        }
    }
}

impl Step {
    fn name(&self) -> &'static str {
        match self {
            Step::Seed { .. } => "seed",
            Step::RegisterSource { .. } => "register_source",
            Step::SetRecords { .. } => "set_records",
            Step::Harvest { .. } => "harvest",
            Step::Claim { .. } => "claim",
            Step::LinkNct { .. } => "link_nct",
            Step::SubmitSlmd { .. } => "submit_slmd",
            Step::SetRepository { .. } => "set_repository",
            Step::AttachVlmd { .. } => "attach_vlmd",
            Step::FetchUrl { .. } => "fetch_url",
            Step::Tick { .. } => "tick",
            Step::FailReports { .. } => "fail_reports",
            Step::DeliverReports => "deliver_reports",
            Step::Assert { .. } => "assert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertOutcome {
    pub step: usize,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

/// Everything here except `wall_ms` is a function of the script and seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub passed: bool,
    pub steps_run: usize,
    pub asserts: Vec<AssertOutcome>,
    pub first_failure: Option<String>,
    pub event_counts: BTreeMap<String, u64>,
    pub bytes_moved: u64,
    pub wall_ms: u64,
}

pub fn load_script(path: &Path) -> Result<Script, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_script(&text)
}

pub fn parse_script(text: &str) -> Result<Script, HarnessError> {
    let script: Script = serde_json::from_str(text).map_err(|e| HarnessError::Script(e.to_string()))?;
    match script.steps.last() {
        None => return Err(HarnessError::Script(format!("{}: no steps", script.name))),
        Some(s) if !matches!(s.step, Step::Assert { .. }) => {
            return Err(HarnessError::Script(format!("{}: the last step must be an assert", script.name)))
        }
        _ => {}
    }
    if let Some((i, _)) = script
        .steps
        .iter()
        .enumerate()
        .find(|(_, s)| matches!(s.step, Step::Assert { .. }) && s.expect_error.is_some())
    {
        return Err(HarnessError::Script(format!("step {i}: asserts cannot expect an error")));
    }
    Ok(script)
}

pub const DEFAULT_SEED: u64 = 42;

/// Runs `script` on a fresh mesh with its journals in a temporary
/// directory. `seed` overrides the script's own.
pub fn run_script(script: &Script, seed: Option<u64>) -> Result<ScenarioReport, HarnessError> {
    let seed = seed.or(script.seed).unwrap_or(DEFAULT_SEED);
    let started = Instant::now();
    let mut mesh = Mesh::start(MeshOptions { seed: Some(seed), ..MeshOptions::default() })?;
    let mut run = Runner { mesh: &mut mesh, disk_baseline: 0, bytes_moved: 0, asserts: Vec::new() };
    run.disk_baseline = run.mesh.disk_usage();

    let mut first_failure = None;
    let mut steps_run = 0;
    for (i, spec) in script.steps.iter().enumerate() {
        steps_run = i + 1;
        let result = run.step(i, &spec.step);
        let failure = match (result, &spec.expect_error) {
            (Ok(()), None) => None,
            (Ok(()), Some(code)) => Some(format!("step {i} ({}): expected error {code}, got success", spec.step.name())),
            (Err(StepFailure::Api(code, _)), Some(want)) if want == "any" || *want == code => None,
            (Err(StepFailure::Other(_)), Some(want)) if want == "any" => None,
            (Err(e), _) => Some(format!("step {i} ({}): {e}", spec.step.name())),
        };
        if let Some(f) = failure {
            first_failure = Some(f);
            break;
        }
        if let Some(a) = run.asserts.iter().find(|a| !a.passed) {
            first_failure = Some(format!("step {} assert {}: {}", a.step, a.check, a.detail));
            break;
        }
    }
    let mut event_counts = BTreeMap::new();
    for e in run.mesh.hub.gateway.usage().events() {
        let name = match e.action {
            UsageAction::Resolved => "resolved",
            UsageAction::UrlIssued => "url_issued",
            UsageAction::Denied => "denied",
        };
        *event_counts.entry(name.to_string()).or_insert(0) += 1;
    }
    event_counts.insert("harvest_runs".into(), run.mesh.hub.adapters.runs(None).len() as u64);
    Ok(ScenarioReport {
        name: script.name.clone(),
        seed,
        passed: first_failure.is_none(),
        steps_run,
        asserts: run.asserts,
        first_failure,
        event_counts,
        bytes_moved: run.bytes_moved,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

#[derive(Debug)]
enum StepFailure {
    /// The hub answered with an error body carrying this code.
    Api(String, String),
    Other(String),
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepFailure::Api(code, msg) => write!(f, "{code}: {msg}"),
            StepFailure::Other(msg) => f.write_str(msg),
        }
    }
}

impl From<HarnessError> for StepFailure {
    fn from(e: HarnessError) -> Self {
        StepFailure::Other(e.to_string())
    }
}

fn ok(reply: Reply) -> Result<Value, StepFailure> {
    if reply.ok() {
        return Ok(reply.body);
    }
    match reply.error_code() {
        Some(code) => Err(StepFailure::Api(
            code.to_string(),
            reply.body["message"].as_str().unwrap_or_default().to_string(),
        )),
        None => Err(StepFailure::Other(format!("status {}", reply.status))),
    }
}

fn guid_path(guid: &str, action: &str) -> String {
    format!("/studies/{guid}/{action}")
}

struct Runner<'a> {
    mesh: &'a mut Mesh,
    disk_baseline: u64,
    bytes_moved: u64,
    asserts: Vec<AssertOutcome>,
}

impl Runner<'_> {
    fn admin(&self) -> Result<String, StepFailure> {
        Ok(self.mesh.admin_token()?)
    }

    fn login(&self, user: &str) -> Result<String, StepFailure> {
        Ok(self.mesh.login(user)?)
    }

    fn step(&mut self, index: usize, step: &Step) -> Result<(), StepFailure> {
        let c = self.mesh.client().clone();
        match step {
            Step::Seed { profile, repositories, awards } => {
                if let Some(p) = profile {
                    let p: Profile = p.parse()?;
                    seed_fixture(self.mesh, p)?;
                }
                for r in repositories {
                    let objects = r
                        .objects
                        .iter()
                        .map(|o| MockObject::new(&o.key, o.size_bytes, o.controlled))
                        .collect();
                    self.mesh.spawn_mock_repo(&r.id, r.tier, objects, r.allow_list.clone())?;
                }
                if !awards.is_empty() {
                    let body = json!({
                        "awards": awards.iter().map(|a| json!({ "award_number": a })).collect::<Vec<_>>()
                    });
                    ok(c.post("/studies", Some(&self.admin()?), &body)?)?;
                }
            }
            Step::RegisterSource { source, records } => {
                let text = source.to_string().replace("{sources}", &self.mesh.sources_url);
                let desc: Value = serde_json::from_str(&text).map_err(|e| StepFailure::Other(e.to_string()))?;
                if let Some(records) = records {
                    let id = desc["source_id"].as_str().unwrap_or_default();
                    self.mesh.sources.set_records(id, records.clone());
                }
                ok(c.post("/adapters/sources", Some(&self.admin()?), &desc)?)?;
            }
            Step::SetRecords { source_id, records } => {
                self.mesh.sources.set_records(source_id, records.clone());
            }
            Step::Harvest { source_id } => {
                let run = ok(c.post(&format!("/adapters/{source_id}/run"), Some(&self.admin()?), &Value::Null)?)?;
                if !run["errors"].as_array().is_none_or(Vec::is_empty) {
                    return Err(StepFailure::Other(format!("harvest reported errors: {}", run["errors"])));
                }
            }
            Step::Claim { user, guid } => {
                let token = self.login(user)?;
                let issued = ok(c.post(&guid_path(guid, "claim-token"), Some(&self.admin()?), &Value::Null)?)?;
                let body = json!({ "claim_token": issued["claim_token"] });
                ok(c.post(&guid_path(guid, "claim"), Some(&token), &body)?)?;
            }
            Step::LinkNct { user, guid, nct_id } => {
                let token = self.login(user)?;
                ok(c.post(&guid_path(guid, "nct"), Some(&token), &json!({ "nct_id": nct_id }))?)?;
            }
            Step::SubmitSlmd { user, guid, fields } => {
                let token = self.login(user)?;
                ok(c.post(&guid_path(guid, "slmd"), Some(&token), fields)?)?;
            }
            Step::SetRepository { user, guid, repository } => {
                let token = self.login(user)?;
                let body = json!({ "repository_id": repository });
                ok(c.post(&guid_path(guid, "repository"), Some(&token), &body)?)?;
            }
            Step::AttachVlmd { user, guid, csv } => {
                let token = self.login(user)?;
                let dict = infer_from_csv_bytes(csv.as_bytes(), &InferOptions::default())
                    .map_err(|e| StepFailure::Other(e.to_string()))?;
                let body = serde_json::to_value(&dict).map_err(|e| StepFailure::Other(e.to_string()))?;
                ok(c.post(&guid_path(guid, "vlmd"), Some(&token), &body)?)?;
            }
            Step::FetchUrl { user, repository, key, expect, download } => {
                let pid = self
                    .mesh
                    .pid_of(repository, key)
                    .ok_or_else(|| StepFailure::Other(format!("no object {key} in {repository}")))?;
                let token = self.login(user)?;
                let reply = c.get(&format!("/data/{pid}/url"), Some(&token))?;
                match (expect, reply.ok()) {
                    (FetchExpect::Issued, true) => {}
                    (FetchExpect::Denied, false) if reply.error_code() == Some("denied") => return Ok(()),
                    (want, _) => {
                        return Err(StepFailure::Other(format!(
                            "expected {want:?}, hub answered {} {}",
                            reply.status,
                            reply.error_code().unwrap_or("ok")
                        )))
                    }
                }
                if *download {
                    let url = reply.body["url"].as_str().unwrap_or_default().to_string();
                    let (status, len, sha) = c.download(&url)?;
                    let obj = self
                        .mesh
                        .repo(repository)
                        .and_then(|r| r.objects().into_iter().find(|o| &o.key == key))
                        .ok_or_else(|| StepFailure::Other(format!("no object {key}")))?;
                    if status != 200 || len != obj.size_bytes || sha != obj.sha256 {
                        return Err(StepFailure::Other(format!(
                            "download of {key}: status {status}, {len} bytes, checksum {}",
                            if sha == obj.sha256 { "ok" } else { "mismatch" }
                        )));
                    }
                    self.bytes_moved += len;
                }
            }
            Step::Tick { seconds } => self.mesh.tick(*seconds),
            Step::FailReports { repository, count } => {
                let repo = self
                    .mesh
                    .repo(repository)
                    .ok_or_else(|| StepFailure::Other(format!("no mock repository {repository}")))?;
                repo.fail_next_reports(*count);
            }
            Step::DeliverReports => {
                let admin = self.admin()?;
                let ids: Vec<String> = self.mesh.repos().map(|r| r.repository_id.clone()).collect();
                for day in self.mesh.hub.gateway.usage().days() {
                    for id in &ids {
                        ok(c.post(&format!("/repositories/{id}/usage/deliver?day={day}"), Some(&admin), &Value::Null)?)?;
                    }
                }
            }
            Step::Assert { checks } => {
                self.mesh.hub.search.rebuild_index();
                for check in checks {
                    let (passed, detail) = match self.check(check) {
                        Ok(()) => (true, String::new()),
                        Err(why) => (false, why),
                    };
                    self.asserts.push(AssertOutcome { step: index, check: check.name().into(), passed, detail });
                }
            }
        }
        Ok(())
    }

    fn check(&self, check: &Check) -> Result<(), String> {
        let c = self.mesh.client();
        let hub = &self.mesh.hub;
        let http = |e: HarnessError| e.to_string();
        match check {
            Check::SearchHits { text, facets, total, includes } => {
                let mut q: Vec<(String, String)> = vec![("limit".into(), "100000".into())];
                if let Some(t) = text {
                    q.push(("text".into(), t.clone()));
                }
                for (f, vals) in facets {
                    q.extend(vals.iter().map(|v| (format!("facet.{f}"), v.clone())));
                }
                let qs = url::form_urlencoded::Serializer::new(String::new()).extend_pairs(q).finish();
                let body = c.get(&format!("/search?{qs}"), None).map_err(http)?.expect_ok().map_err(http)?.clone();
                let got: BTreeSet<&str> = body["guids"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
                if let Some(t) = total {
                    if got.len() != *t {
                        return Err(format!("{} hits, expected {t}", got.len()));
                    }
                }
                let missing: Vec<&String> = includes.iter().filter(|g| !got.contains(g.as_str())).collect();
                if !missing.is_empty() {
                    return Err(format!("missing hits {missing:?}"));
                }
                Ok(())
            }
            Check::StudyState { guid, state } => {
                let body = c.get(&format!("/studies/{guid}"), None).map_err(http)?;
                let got = body.body["state"].as_str().unwrap_or("(none)").to_string();
                if &got == state {
                    Ok(())
                } else {
                    Err(format!("{guid} is {got}, expected {state}"))
                }
            }
            Check::UsageCounts { repository, resolved, url_issued, denied } => {
                let r = c.get(&format!("/repositories/{repository}/usage"), None).map_err(http)?;
                let body = r.expect_ok().map_err(http)?;
                let count = |k: &str| body["counts"][k].as_u64().unwrap_or(0);
                for (name, want) in [("resolved", resolved), ("url_issued", url_issued), ("denied", denied)] {
                    if let Some(w) = want {
                        if count(name) != *w {
                            return Err(format!("{repository}: {name} = {}, expected {w}", count(name)));
                        }
                    }
                }
                Ok(())
            }
            Check::Stats { expect } => {
                let r = c.get("/stats", None).map_err(http)?;
                let body = r.expect_ok().map_err(http)?;
                for (k, want) in expect {
                    let got = body[k.as_str()].as_u64();
                    if got != Some(*want) {
                        return Err(format!("{k} = {got:?}, expected {want}"));
                    }
                }
                Ok(())
            }
            Check::DiskDeltaBelow { bytes } => {
                let delta = self.mesh.disk_usage().saturating_sub(self.disk_baseline);
                if delta < *bytes {
                    Ok(())
                } else {
                    Err(format!("hub data grew by {delta} bytes, limit {bytes}"))
                }
            }
            Check::BytesMovedAtLeast { bytes } => {
                if self.bytes_moved >= *bytes {
                    Ok(())
                } else {
                    Err(format!("{} bytes downloaded, expected at least {bytes}", self.bytes_moved))
                }
            }
            Check::HarvestAccounting => {
                let r = c.get("/adapters/runs", None).map_err(http)?;
                let runs: Vec<meshhub_core::adapters::HarvestRun> =
                    serde_json::from_value(r.body).map_err(|e| e.to_string())?;
                match runs.iter().find(|r| !r.accounting_holds()) {
                    None => Ok(()),
                    Some(r) => Err(format!(
                        "{}: fetched {} != {} + {} + {} + {}",
                        r.run_id,
                        r.fetched,
                        r.created,
                        r.updated,
                        r.unchanged,
                        r.record_errors()
                    )),
                }
            }
            Check::DigestConservation => {
                let usage = hub.gateway.usage();
                let mut digested = 0;
                for day in usage.days() {
                    for repo in self.mesh.repos() {
                        let digest = usage.digest(&repo.repository_id, day);
                        digested += digest.total();
                        let sunk = repo.sink_log().digests.get(&digest.idempotency_key()).cloned();
                        if let Some(s) = sunk {
                            if s != digest {
                                return Err(format!("{} holds a stale digest for {day}", repo.repository_id));
                            }
                        }
                    }
                }
                if digested == usage.len() as u64 {
                    Ok(())
                } else {
                    Err(format!("digests count {digested} of {} events", usage.len()))
                }
            }
            Check::Invariants => {
                let v = check_invariants(hub);
                if v.is_empty() {
                    Ok(())
                } else {
                    Err(v.join("; "))
                }
            }
        }
    }
}
