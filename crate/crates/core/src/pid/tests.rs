use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::*;
use crate::clock::ManualClock;
use crate::gateway::test_support::descriptor;

const SHA: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

fn setup(seed: u64) -> (Arc<RepositoryRegistry>, PidIndex) {
    let registry = Arc::new(RepositoryRegistry::in_memory());
    registry.register(descriptor("repoA", Tier::FullApi)).unwrap();
    registry.register(descriptor("repoB", Tier::BucketOnly)).unwrap();
    registry.register(descriptor("repoC", Tier::MetadataOnly)).unwrap();
    let index = PidIndex::in_memory(
        DEFAULT_PREFIX,
        Some(seed),
        registry.clone(),
        Arc::new(ManualClock::at_default_epoch()),
    )
    .unwrap();
    (registry, index)
}

fn sha256() -> BTreeMap<String, String> {
    BTreeMap::from([("sha256".to_string(), SHA.to_string())])
}

fn api_method() -> Vec<AccessMethod> {
    vec![AccessMethod::repo_api("http://repo-a.test/data/obj-1", true)]
}

#[test]
fn minted_pid_is_well_formed_and_resolvable() {
    let (_, index) = setup(7);
    let record = index.mint_pid("repoA", 1024, sha256(), api_method()).unwrap();
    assert!(record.pid.starts_with("heal/"));
    assert!(crate::ids::is_valid_pid(&record.pid), "{}", record.pid);
    assert_eq!(index.resolve_pid(&record.pid).unwrap(), record);
}

#[test]
fn mint_validation_errors() {
    let (_, index) = setup(7);
    assert!(matches!(
        index.mint_pid("repoA", 1, sha256(), vec![]),
        Err(PidError::NoAccessMethod)
    ));
    assert!(matches!(
        index.mint_pid("nope", 1, sha256(), api_method()),
        Err(PidError::UnknownRepository(_))
    ));
    for bad in [
        BTreeMap::new(),
        BTreeMap::from([("sha256".to_string(), "xyz".to_string())]),
        BTreeMap::from([("sha256".to_string(), SHA.to_uppercase())]),
        BTreeMap::from([("md5".to_string(), SHA.to_string())]),
        BTreeMap::from([("sha1".to_string(), "a".repeat(40))]),
        BTreeMap::from([
            ("sha256".to_string(), SHA.to_string()),
            ("crc32".to_string(), "deadbeef".to_string()),
        ]),
    ] {
        assert!(
            matches!(index.mint_pid("repoA", 1, bad.clone(), api_method()), Err(PidError::InvalidChecksum(_))),
            "{bad:?}"
        );
    }
    assert!(matches!(
        index.mint_pid("repoA", 1, sha256(), vec![AccessMethod::repo_api("  ", false)]),
        Err(PidError::InvalidAccessMethod(_))
    ));
    // bucket locators are only for the bucket tiers, and only the repository's own bucket
    assert!(matches!(
        index.mint_pid("repoA", 1, sha256(), vec![AccessMethod::bucket("repoA-bucket", "k", false)]),
        Err(PidError::InvalidAccessMethod(_))
    ));
    assert!(matches!(
        index.mint_pid("repoB", 1, sha256(), vec![AccessMethod::bucket("repoC-bucket", "k", false)]),
        Err(PidError::InvalidAccessMethod(_))
    ));
    assert!(matches!(
        index.mint_pid("repoB", 1, sha256(), vec![AccessMethod {
            kind: AccessKind::Bucket,
            locator: "s3://repoB-bucket/k".into(),
            requires_authorization: false,
        }]),
        Err(PidError::InvalidAccessMethod(_))
    ));
    index
        .mint_pid("repoB", 1, sha256(), vec![AccessMethod::bucket("repoB-bucket", "dir/k.csv", true)])
        .unwrap();
    assert_eq!(index.count(), 1);
}

#[test]
fn resolve_errors() {
    let (_, index) = setup(7);
    assert!(matches!(index.resolve_pid("HEAL/ABC"), Err(PidError::MalformedPid(_))));
    assert!(matches!(
        index.resolve_pid("heal/0f8fad5b-d9cb-469f-a165-70867728950e"),
        Err(PidError::UnknownPid(_))
    ));
}

#[test]
fn list_by_repository_partitions_the_index() {
    let (_, index) = setup(11);
    for _ in 0..3 {
        index.mint_pid("repoA", 5, sha256(), api_method()).unwrap();
    }
    for i in 0..4 {
        index
            .mint_pid("repoB", 5, sha256(), vec![AccessMethod::bucket("repoB-bucket", &format!("k{i}"), false)])
            .unwrap();
    }
    assert_eq!(index.list_by_repository("repoA").unwrap().len(), 3);
    assert!(index.list_by_repository("repoC").unwrap().is_empty());
    assert!(matches!(index.list_by_repository("zzz"), Err(PidError::UnknownRepository(_))));

    let mut union: Vec<DataObjectRecord> = ["repoA", "repoB", "repoC"]
        .iter()
        .flat_map(|r| index.list_by_repository(r).unwrap())
        .collect();
    let listed = index.list_by_repository("repoB").unwrap();
    assert!(listed.windows(2).all(|w| w[0].pid < w[1].pid));
    union.sort_by(|a, b| a.pid.cmp(&b.pid));
    assert_eq!(union, index.all());
}

#[test]
fn seeded_sequence_is_reproducible() {
    let mint_n = |seed| {
        let (_, index) = setup(seed);
        (0..20)
            .map(|_| index.mint_pid("repoA", 1, sha256(), api_method()).unwrap().pid)
            .collect::<Vec<_>>()
    };
    assert_eq!(mint_n(42), mint_n(42));
    assert_ne!(mint_n(42), mint_n(43));
}

#[test]
fn ten_thousand_mints_do_not_collide() {
    let (_, index) = setup(3);
    let pids: BTreeSet<String> = (0..10_000)
        .map(|_| index.mint_pid("repoA", 1, sha256(), api_method()).unwrap().pid)
        .collect();
    assert_eq!(pids.len(), 10_000);
}

#[test]
fn concurrent_mints_are_unique() {
    let (_, index) = setup(5);
    let index = Arc::new(index);
    let pids: Vec<String> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..8)
            .map(|_| {
                let index = index.clone();
                s.spawn(move || {
                    (0..200)
                        .map(|_| index.mint_pid("repoA", 1, sha256(), api_method()).unwrap().pid)
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        hs.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(pids.iter().collect::<BTreeSet<_>>().len(), 1600);
    assert_eq!(index.count(), 1600);
}

#[test]
fn access_methods_rotate_and_survive_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pids.jsonl");
    let registry = Arc::new(RepositoryRegistry::in_memory());
    registry.register(descriptor("repoA", Tier::FullApi)).unwrap();
    let clock: SharedClock = Arc::new(ManualClock::at_default_epoch());
    let index = PidIndex::open(&path, "heal", Some(1), registry.clone(), clock.clone()).unwrap();
    let rec = index.mint_pid("repoA", 9, sha256(), api_method()).unwrap();
    let rotated = vec![AccessMethod::repo_api("http://repo-a.test/v2/obj-1", true)];
    let updated = index.replace_access_methods(&rec.pid, rotated.clone()).unwrap();
    assert_eq!(updated.access_methods, rotated);
    assert_eq!(updated.checksums, rec.checksums);
    assert!(matches!(
        index.replace_access_methods(&rec.pid, vec![]),
        Err(PidError::NoAccessMethod)
    ));
    drop(index);

    let index = PidIndex::open(&path, "heal", Some(1), registry, clock).unwrap();
    assert_eq!(index.resolve_pid(&rec.pid).unwrap(), updated);
}

#[test]
fn rejects_bad_prefix() {
    let registry = Arc::new(RepositoryRegistry::in_memory());
    assert!(matches!(
        PidIndex::in_memory("Bad", None, registry, Arc::new(ManualClock::at_default_epoch())),
        Err(PidError::InvalidPrefix(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mint_resolve_round_trip_is_field_exact(
        size in any::<u64>(),
        sha in "[0-9a-f]{64}",
        md5 in prop::option::of("[0-9a-f]{32}"),
        locators in prop::collection::vec("https://[a-z]{3,8}\\.test/[a-z0-9/]{1,12}", 1..4),
        controlled in any::<bool>(),
    ) {
        let (_, index) = setup(99);
        let mut checksums = BTreeMap::from([("sha256".to_string(), sha)]);
        if let Some(m) = md5 {
            checksums.insert("md5".into(), m);
        }
        let methods: Vec<_> = locators.into_iter().map(|l| AccessMethod::repo_api(l, controlled)).collect();
        let minted = index.mint_pid("repoA", size, checksums.clone(), methods.clone()).unwrap();
        let resolved = index.resolve_pid(&minted.pid).unwrap();
        prop_assert_eq!(&resolved, &minted);
        prop_assert_eq!(resolved.size_bytes, size);
        prop_assert_eq!(resolved.checksums, checksums);
        prop_assert_eq!(resolved.access_methods, methods);
        prop_assert_eq!(resolved.repository_id, "repoA");
    }
}
