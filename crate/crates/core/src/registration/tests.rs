use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::adapters::{FieldMapping, GuidRule, SourceDescriptor, SourceFetcher, SourceKind, Transform};
use crate::auth::{AuthSettings, Principal};
use crate::clock::ManualClock;
use crate::metadata::MetadataQuery;
use crate::tree::DotPath;
use crate::vlmd::{infer_from_csv_bytes, InferOptions};

struct Registry;

impl SourceFetcher for Registry {
    fn get(&self, url: &str) -> Result<String, String> {
        let key = url.split_once("?key=").map(|(_, k)| k).unwrap_or("");
        Ok(match key {
            "NCT00000001" => json!([{"nct_id": key, "brief_title": "Opioid taper trial", "phase": "Phase 2"}]),
            _ => json!([]),
        }
        .to_string())
    }
}

struct Env {
    store: Arc<MetadataStore>,
    auth: Arc<AuthService>,
    reg: RegistrationService,
}

fn trial_source() -> SourceDescriptor {
    SourceDescriptor {
        source_id: "trial_registry".into(),
        kind: SourceKind::TrialRegistry,
        endpoint: "http://registry.test/records".into(),
        mapping: vec![
            FieldMapping::new("nct_id", "nct_id", Transform::Identity).unwrap(),
            FieldMapping::new("brief_title", "title", Transform::Identity).unwrap(),
            FieldMapping::new("phase", "phase", Transform::Identity).unwrap(),
        ],
        schedule_interval_s: 86_400,
        enabled: true,
        block: None,
        key_path: DotPath::parse("nct_id").unwrap(),
        guid: GuidRule::Linked { link_path: DotPath::parse("registration.nct_id").unwrap() },
        scrape: None,
    }
}

fn env_at(journal: Option<&std::path::Path>) -> Env {
    let clock: SharedClock = Arc::new(ManualClock::at_default_epoch());
    let store = Arc::new(MetadataStore::in_memory(clock.clone()));
    let mut settings = AuthSettings::new(b"k".to_vec());
    settings.seed = Some(1);
    let auth = Arc::new(AuthService::in_memory(settings, clock.clone()));
    for u in ["admin", "alice", "bob", "carol"] {
        auth.register_user(Principal::new(u, "idp.test")).unwrap();
    }
    auth.grant(AccessPolicy { resource_path: "/".into(), role: Role::HubAdmin, principal: "admin".into() })
        .unwrap();
    let adapters = Arc::new(AdapterService::in_memory(store.clone(), Arc::new(Registry), clock.clone(), false));
    adapters.register_source(trial_source()).unwrap();
    let settings = RegistrationSettings { seed: Some(7), ..Default::default() };
    let schema = SlmdSchema::bundled();
    let reg = match journal {
        Some(p) => RegistrationService::open(p, store.clone(), auth.clone(), Some(adapters), schema, settings, clock)
            .unwrap(),
        None => RegistrationService::in_memory(store.clone(), auth.clone(), Some(adapters), schema, settings, clock),
    };
    Env { store, auth, reg }
}

fn env() -> Env {
    env_at(None)
}

fn awards(n: usize) -> Vec<(String, Value)> {
    (0..n)
        .map(|i| (format!("AWD{i:04}"), json!({"award_number": format!("AWD{i:04}"), "institute": "NIDA"})))
        .collect()
}

fn slmd() -> Value {
    json!({
        "title": "Tapering study",
        "objectives": {"primary_objective": "Reduce opioid dose"},
        "design": {"study_type": "interventional"},
        "population": {"description": "Adults with chronic pain"}
    })
}

fn claimed(e: &Env, i: usize, user: &str) -> String {
    let guid = RegistrationService::guid_for_award(&format!("AWD{i:04}"));
    let token = e.reg.issue_claim_token("admin", &guid).unwrap();
    e.reg.claim_study(user, &guid, &token).unwrap();
    guid
}

#[test]
fn seeding_creates_unregistered_studies() {
    let e = env();
    let recs = e.reg.seed_from_awards(awards(10)).unwrap();
    assert_eq!(recs.len(), 10);
    assert_eq!(e.reg.list(Some(StudyState::Unregistered)).len(), 10);
    assert_eq!(e.store.count(), 10);
    let doc = e.store.get_document("heal/AWD0003").unwrap();
    assert_eq!(doc.block("grant_source").unwrap()["institute"], "NIDA");
    assert_eq!(doc.block("registration").unwrap()["state"], "UNREGISTERED");

    let mut dup = awards(2);
    dup[1].0 = "NEW1".into();
    dup[0].0 = "NEW1".into();
    assert!(matches!(e.reg.seed_from_awards(dup), Err(RegistrationError::DuplicateAward(_))));
    let again = vec![("NEW2".to_string(), json!({})), ("AWD0001".to_string(), json!({}))];
    assert!(matches!(e.reg.seed_from_awards(again), Err(RegistrationError::DuplicateAward(a)) if a == "AWD0001"));
    assert_eq!(e.store.count(), 10, "rejected batches write nothing");
    assert!(matches!(
        e.reg.seed_from_awards(vec![("bad award".into(), json!({}))]),
        Err(RegistrationError::InvalidAward(_))
    ));
}

#[test]
fn claim_is_token_gated_and_exactly_once() {
    let e = env();
    e.reg.seed_from_awards(awards(2)).unwrap();
    let guid = "heal/AWD0000";
    assert!(matches!(
        e.reg.issue_claim_token("alice", guid),
        Err(RegistrationError::NotAuthorized { .. })
    ));
    let token = e.reg.issue_claim_token("admin", guid).unwrap();
    for _ in 0..3 {
        assert!(matches!(e.reg.claim_study("alice", guid, "nope"), Err(RegistrationError::BadClaimToken)));
        assert_eq!(e.reg.get(guid).unwrap().state, StudyState::Unregistered);
    }
    assert!(matches!(e.reg.claim_study("alice", "heal/none", &token), Err(RegistrationError::UnknownStudy(_))));
    assert!(matches!(e.reg.claim_study("alice", "heal/AWD0001", &token), Err(RegistrationError::BadClaimToken)));
    let rec = e.reg.claim_study("alice", guid, &token).unwrap();
    assert_eq!(rec.state, StudyState::Claimed);
    assert_eq!(rec.owner.as_deref(), Some("alice"));
    assert_eq!(rec.claim_token_hash, None);
    assert!(matches!(e.reg.claim_study("bob", guid, &token), Err(RegistrationError::AlreadyClaimed(_))));
    assert!(matches!(e.reg.issue_claim_token("admin", guid), Err(RegistrationError::AlreadyClaimed(_))));
    let grants = e.auth.policies_on(&study_path(guid));
    assert_eq!(grants.len(), 1);
    assert_eq!((grants[0].principal.as_str(), grants[0].role), ("alice", Role::StudyAdmin));
    assert_eq!(e.store.get_document(guid).unwrap().block("registration").unwrap()["owner"], "alice");
}

#[test]
fn concurrent_claims_have_one_winner() {
    let e = env();
    e.reg.seed_from_awards(awards(1)).unwrap();
    let token = e.reg.issue_claim_token("admin", "heal/AWD0000").unwrap();
    let users = ["alice", "bob", "carol", "admin"];
    let wins: usize = std::thread::scope(|s| {
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let (reg, token) = (&e.reg, &token);
                s.spawn(move || reg.claim_study(users[i % 4], "heal/AWD0000", token).is_ok())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap() as usize).sum()
    });
    assert_eq!(wins, 1);
    let owner = e.reg.get("heal/AWD0000").unwrap().owner.unwrap();
    let admins = e.auth.policies_on("/studies/heal/AWD0000");
    assert_eq!(admins.len(), 1);
    assert_eq!(admins[0].principal, owner);
}

#[test]
fn linking_a_trial_harvests_the_registry_block() {
    let e = env();
    e.reg.seed_from_awards(awards(3)).unwrap();
    let guid = claimed(&e, 0, "alice");
    assert!(matches!(e.reg.link_nct("alice", &guid, "NCT123"), Err(RegistrationError::MalformedNct(_))));
    assert!(matches!(
        e.reg.link_nct("bob", &guid, "NCT00000001"),
        Err(RegistrationError::NotAuthorized { .. })
    ));
    assert!(matches!(
        e.reg.link_nct("admin", "heal/AWD0002", "NCT00000001"),
        Err(RegistrationError::WrongState { .. })
    ));
    let run = e.reg.link_nct("alice", &guid, "NCT00000001").unwrap();
    assert_eq!(run.created + run.updated, 1);
    let doc = e.store.get_document(&guid).unwrap();
    assert_eq!(doc.block("registry_source").unwrap()["title"], "Opioid taper trial");
    let hits = e.store.query_documents(&MetadataQuery::default().text("taper")).unwrap();
    assert_eq!(hits.iter().map(|d| d.guid.as_str()).collect::<Vec<_>>(), [guid.as_str()]);

    let other = claimed(&e, 1, "bob");
    match e.reg.link_nct("bob", &other, "NCT99999999") {
        Err(RegistrationError::RegistryMiss { run, .. }) => assert_eq!(run.errors.len(), 1),
        r => panic!("{r:?}"),
    }
    assert_eq!(e.reg.get(&other).unwrap().nct_id.as_deref(), Some("NCT99999999"));
}

#[test]
fn slmd_submission_and_schema_errors() {
    let e = env();
    e.reg.seed_from_awards(awards(2)).unwrap();
    let guid = claimed(&e, 0, "alice");
    assert!(matches!(
        e.reg.submit_slmd("admin", "heal/AWD0001", slmd()),
        Err(RegistrationError::WrongState { .. })
    ));
    let mut missing = slmd();
    missing.as_object_mut().unwrap().remove("objectives");
    match e.reg.submit_slmd("alice", &guid, missing) {
        Err(RegistrationError::SchemaViolation(v)) => {
            assert_eq!(v.len(), 1);
            assert!(v[0].contains("objectives"), "{v:?}");
        }
        r => panic!("{r:?}"),
    }
    let mut bad = slmd();
    bad["design"]["study_type"] = json!("vibes");
    match e.reg.submit_slmd("alice", &guid, bad) {
        Err(RegistrationError::SchemaViolation(v)) => assert!(v[0].starts_with("/design/study_type"), "{v:?}"),
        r => panic!("{r:?}"),
    }
    assert!(matches!(e.reg.submit_slmd("bob", &guid, slmd()), Err(RegistrationError::NotAuthorized { .. })));

    let rec = e.reg.submit_slmd("alice", &guid, slmd()).unwrap();
    assert_eq!(rec.state, StudyState::SlmdSubmitted);
    let block = e.store.get_document(&guid).unwrap().block("slmd").unwrap().clone();
    assert_eq!(block["schema_version"], "1.0");
    assert_eq!(block["submitted_by"], "alice");
    assert_eq!(block["design"]["study_type"], "interventional");
    let rec = e.reg.submit_slmd("alice", &guid, slmd()).unwrap();
    assert_eq!(rec.state, StudyState::SlmdSubmitted);
}

#[test]
fn delegation_and_alternating_editors() {
    let e = env();
    e.reg.seed_from_awards(awards(1)).unwrap();
    let guid = claimed(&e, 0, "alice");
    assert!(matches!(
        e.reg.delegate("bob", &guid, "carol", Role::MetadataEditor),
        Err(RegistrationError::NotAuthorized { .. })
    ));
    assert!(matches!(e.reg.delegate("alice", &guid, "carol", Role::HubAdmin), Err(RegistrationError::InvalidRole(_))));
    assert!(matches!(
        e.reg.delegate("alice", &guid, "zed", Role::MetadataEditor),
        Err(RegistrationError::UnknownUser(_))
    ));
    e.reg.delegate("alice", &guid, "bob", Role::MetadataEditor).unwrap();
    e.reg.submit_slmd("bob", &guid, slmd()).unwrap();
    assert!(matches!(
        e.reg.delegate("bob", &guid, "carol", Role::MetadataEditor),
        Err(RegistrationError::NotAuthorized { .. })
    ));

    let before = e.store.get_document(&guid).unwrap().version;
    let mut last = slmd();
    last["title"] = json!("Final title");
    e.reg.submit_slmd("alice", &guid, slmd()).unwrap();
    e.reg.submit_slmd("bob", &guid, last).unwrap();
    let doc = e.store.get_document(&guid).unwrap();
    assert_eq!(doc.version, before + 2);
    assert_eq!(doc.block("slmd").unwrap()["title"], "Final title");
    assert_eq!(doc.block("slmd").unwrap()["submitted_by"], "bob");
}

#[test]
fn vlmd_attach_and_repository_edits() {
    let e = env();
    e.reg.seed_from_awards(awards(1)).unwrap();
    let guid = claimed(&e, 0, "alice");
    let dict = infer_from_csv_bytes(b"pain_intensity,sex\n3,1\n5,2\n", &InferOptions::default()).unwrap();
    assert!(matches!(e.reg.attach_vlmd("alice", &guid, &dict), Err(RegistrationError::WrongState { .. })));
    e.reg.set_repository("alice", &guid, "repo-a").unwrap();
    e.reg.submit_slmd("alice", &guid, slmd()).unwrap();

    let mut bad = dict.clone();
    bad.variables[0].constraints.min = Some(9.0);
    bad.variables[0].constraints.max = Some(1.0);
    match e.reg.attach_vlmd("alice", &guid, &bad) {
        Err(RegistrationError::SchemaViolation(v)) => assert!(v[0].starts_with("pain_intensity")),
        r => panic!("{r:?}"),
    }
    assert!(matches!(e.reg.attach_vlmd("carol", &guid, &dict), Err(RegistrationError::NotAuthorized { .. })));
    let rec = e.reg.attach_vlmd("alice", &guid, &dict).unwrap();
    assert_eq!(rec.state, StudyState::VlmdAttached);
    assert_eq!(rec.repository_id.as_deref(), Some("repo-a"));
    assert!(matches!(
        e.reg.set_repository("alice", &guid, "repo-b"),
        Err(RegistrationError::WrongState { .. })
    ));
    let hits = e.store.query_documents(&MetadataQuery::default().text("pain_intensity")).unwrap();
    assert_eq!(hits.len(), 1);
    // a later SLMD update keeps the terminal state
    assert_eq!(e.reg.submit_slmd("alice", &guid, slmd()).unwrap().state, StudyState::VlmdAttached);
}

#[test]
fn records_survive_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registration.jsonl");
    let token;
    {
        let e = env_at(Some(&path));
        e.reg.seed_from_awards(awards(3)).unwrap();
        claimed(&e, 0, "alice");
        token = e.reg.issue_claim_token("admin", "heal/AWD0001").unwrap();
    }
    let e = env_at(Some(&path));
    assert_eq!(e.reg.len(), 3);
    assert_eq!(e.reg.get("heal/AWD0000").unwrap().state, StudyState::Claimed);
    e.auth.register_user(Principal::new("dave", "idp.test")).unwrap();
    assert_eq!(e.reg.claim_study("dave", "heal/AWD0001", &token).unwrap().owner.as_deref(), Some("dave"));
}

#[derive(Debug, Clone)]
enum Op {
    IssueToken(usize),
    Claim { study: usize, user: usize, good: bool },
    Link { study: usize, user: usize, known: bool },
    Slmd { study: usize, user: usize, valid: bool },
    Vlmd { study: usize, user: usize },
    Delegate { study: usize, owner: usize, to: usize, admin: bool },
    Repo { study: usize, user: usize },
}

fn op() -> impl Strategy<Value = Op> {
    let s = 0usize..3;
    let u = 0usize..3;
    prop_oneof![
        s.clone().prop_map(Op::IssueToken),
        (s.clone(), u.clone(), any::<bool>()).prop_map(|(study, user, good)| Op::Claim { study, user, good }),
        (s.clone(), u.clone(), any::<bool>()).prop_map(|(study, user, known)| Op::Link { study, user, known }),
        (s.clone(), u.clone(), any::<bool>()).prop_map(|(study, user, valid)| Op::Slmd { study, user, valid }),
        (s.clone(), u.clone()).prop_map(|(study, user)| Op::Vlmd { study, user }),
        (s.clone(), u.clone(), u.clone(), any::<bool>())
            .prop_map(|(study, owner, to, admin)| Op::Delegate { study, owner, to, admin }),
        (s, u).prop_map(|(study, user)| Op::Repo { study, user }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_operation_sequences_stay_legal(ops in prop::collection::vec(op(), 1..=12)) {
        let e = env();
        e.reg.seed_from_awards(awards(3)).unwrap();
        let users = ["alice", "bob", "carol"];
        let guids: Vec<String> = (0..3).map(|i| format!("heal/AWD{i:04}")).collect();
        let dict = infer_from_csv_bytes(b"age\n40\n", &InferOptions::default()).unwrap();
        let mut tokens: Vec<Option<String>> = vec![None; 3];
        let mut claims = [0usize; 3];
        let mut prev: Vec<StudyState> = vec![StudyState::Unregistered; 3];
        for op in ops {
            match op {
                Op::IssueToken(s) => {
                    if let Ok(t) = e.reg.issue_claim_token("admin", &guids[s]) {
                        tokens[s] = Some(t);
                    }
                }
                Op::Claim { study, user, good } => {
                    let t = if good { tokens[study].clone().unwrap_or_default() } else { "wrong".into() };
                    if e.reg.claim_study(users[user], &guids[study], &t).is_ok() {
                        claims[study] += 1;
                    }
                }
                Op::Link { study, user, known } => {
                    let nct = if known { "NCT00000001" } else { "NCT00000009" };
                    let _ = e.reg.link_nct(users[user], &guids[study], nct);
                }
                Op::Slmd { study, user, valid } => {
                    let mut f = slmd();
                    if !valid {
                        f.as_object_mut().unwrap().remove("design");
                    }
                    let _ = e.reg.submit_slmd(users[user], &guids[study], f);
                }
                Op::Vlmd { study, user } => {
                    let _ = e.reg.attach_vlmd(users[user], &guids[study], &dict);
                }
                Op::Delegate { study, owner, to, admin } => {
                    let role = if admin { Role::StudyAdmin } else { Role::MetadataEditor };
                    let _ = e.reg.delegate(users[owner], &guids[study], users[to], role);
                }
                Op::Repo { study, user } => {
                    let _ = e.reg.set_repository(users[user], &guids[study], "repo-a");
                }
            }
            for (i, g) in guids.iter().enumerate() {
                let rec = e.reg.get(g).unwrap();
                let doc = e.store.get_document(g).unwrap();
                // forward-only, one step at a time
                prop_assert!(rec.state >= prev[i]);
                prop_assert!(rec.state as usize <= prev[i] as usize + 1);
                prop_assert_eq!(rec.owner.is_some(), rec.state >= StudyState::Claimed);
                prop_assert_eq!(doc.block("slmd").is_some(), rec.state >= StudyState::SlmdSubmitted);
                prop_assert_eq!(doc.block("vlmd").is_some(), rec.state >= StudyState::VlmdAttached);
                prop_assert_eq!(&doc.block("registration").unwrap()["state"], &json!(rec.state));
                prop_assert!(claims[i] <= 1);
                prop_assert_eq!(claims[i] == 1, rec.state >= StudyState::Claimed);
                prev[i] = rec.state;
            }
            let counts = e.reg.count_at_least(StudyState::Claimed);
            prop_assert!(counts >= e.reg.count_at_least(StudyState::SlmdSubmitted));
            prop_assert!(e.reg.count_at_least(StudyState::SlmdSubmitted) >= e.reg.count_at_least(StudyState::VlmdAttached));
        }
    }
}
