use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use meshhub::config::HubConfig;
use meshhub::connector::{HttpConnector, HttpFetcher};
use meshhub::harness::{
    check_invariants, load_script, parse_script, run_script, seed_fixture, HarnessError, Mesh, MeshOptions, Profile,
};
use meshhub::{Hub, HubError};
use meshhub_core::auth::Role;
use meshhub_core::clock::ManualClock;

fn workspace(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn scenarios() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(workspace("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

#[test]
fn shipped_scenarios_pass() {
    let all = scenarios();
    assert!(all.len() >= 3);
    for path in all {
        let report = run_script(&load_script(&path).unwrap(), None).unwrap();
        assert!(report.passed, "{}: {:?}", path.display(), report.first_failure);
        assert!(report.asserts.iter().all(|a| a.passed));
    }
}

#[test]
fn same_seed_same_report() {
    let script = load_script(&workspace("scenarios/controlled_access_denied.json")).unwrap();
    let run = |seed| {
        let mut r = run_script(&script, Some(seed)).unwrap();
        r.wall_ms = 0;
        r
    };
    let a = run(7);
    assert_eq!(a, run(7));
    assert_eq!(a.seed, 7);
    let other = run(8);
    assert!(other.passed);
    assert_eq!(other.event_counts, a.event_counts);
}

#[test]
fn malformed_scripts_are_refused() {
    let bad = [
        "not json",
        r#"{"name": "empty", "steps": []}"#,
        r#"{"name": "x", "steps": [{"step": "teleport"}]}"#,
        r#"{"name": "x", "steps": [{"step": "seed", "repositories": []}]}"#,
        r#"{"name": "x", "steps": [{"step": "assert", "check": "no_data_at_rest", "expect_error": "boom"}]}"#,
    ];
    for text in bad {
        assert!(matches!(parse_script(text), Err(HarnessError::Script(_))), "{text}");
    }
}

#[test]
fn seeding_refuses_a_populated_mesh() {
    let mut mesh = Mesh::start(MeshOptions { in_memory: true, ..MeshOptions::default() }).unwrap();
    let stats = seed_fixture(&mut mesh, Profile::Tiny).unwrap();
    assert_eq!(stats.connected_repositories, 2);
    assert!(check_invariants(&mesh.hub).is_empty());
    assert!(matches!(seed_fixture(&mut mesh, Profile::Tiny), Err(HarnessError::NonEmptyStore(_))));
    assert!(matches!("huge".parse::<Profile>(), Err(HarnessError::Script(_))));
}

#[test]
fn journals_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let opts = MeshOptions { data_dir: Some(dir.path().to_path_buf()), seed: Some(3), ..MeshOptions::default() };
    let before = {
        let mut mesh = Mesh::start(opts.clone()).unwrap();
        seed_fixture(&mut mesh, Profile::Tiny).unwrap()
    };
    let mesh = Mesh::start(opts).unwrap();
    let after = mesh.hub.stats();
    assert_eq!(serde_json::to_value(after).unwrap(), serde_json::to_value(before).unwrap());
}

fn in_memory(cfg: &HubConfig) -> Hub {
    let mut options = cfg.options().unwrap();
    options.data_dir = None;
    let timeout = Duration::from_secs(5);
    Hub::build(
        options,
        Arc::new(ManualClock::at_default_epoch()),
        Arc::new(HttpConnector::new(timeout)),
        Arc::new(HttpFetcher::new(timeout)),
    )
    .unwrap()
}

#[test]
fn example_config_loads_and_applies_idempotently() {
    let cfg = HubConfig::load(&workspace("config/hub.example.json")).unwrap();
    assert!(cfg.auth.mock_idp);
    let options = cfg.options().unwrap();
    assert_eq!(options.pid_prefix, "heal");
    assert_eq!(options.facets.len(), 5);
    assert_eq!(options.max_token_lifetime.num_seconds(), 3600);
    assert!(options.data_dir.unwrap().ends_with("var/hub"));

    let hub = in_memory(&cfg);
    cfg.apply(&hub).unwrap();
    cfg.apply(&hub).unwrap();
    assert_eq!(hub.registry.count(), 2);
    assert_eq!(hub.adapters.sources().len(), 1);
    assert!(hub.auth.check_access("steward", "/studies/x", Role::HubAdmin).unwrap());
    assert!(!hub.auth.check_access("curator", "/", Role::StudyAdmin).unwrap());
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    assert!(matches!(HubConfig::load(&dir.path().join("absent.json")), Err(HubError::Config(_))));
    let typo = write("typo.json", r#"{"server": {"bnd": "0.0.0.0:1"}}"#);
    assert!(matches!(HubConfig::load(&typo), Err(HubError::Config(_))));

    let dangling = write("dangling.json", r#"{"repositories": "missing.json"}"#);
    let cfg = HubConfig::load(&dangling).unwrap();
    assert!(matches!(cfg.apply(&in_memory(&cfg)), Err(HubError::Config(_))));

    let empty = write("empty.json", "{}");
    let cfg = HubConfig::load(&empty).unwrap();
    assert_eq!(cfg.server.bind, "127.0.0.1:8080");
    assert!(cfg.options().unwrap().data_dir.is_none());
}
