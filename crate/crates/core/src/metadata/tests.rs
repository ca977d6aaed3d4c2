use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::{json, Value};

use super::*;
use crate::clock::ManualClock;

fn store() -> MetadataStore {
    MetadataStore::in_memory(Arc::new(ManualClock::at_default_epoch()))
}

#[test]
fn create_starts_at_version_one_and_rejects_duplicates() {
    let s = store();
    let doc = s.create_document("heal/study-0001", json!({"title": "A"})).unwrap();
    assert_eq!(doc.version, 1);
    assert_eq!(doc.created_at, doc.updated_at);
    assert!(matches!(
        s.create_document("heal/study-0001", json!({"title": "B"})),
        Err(MetadataError::DuplicateGuid(_))
    ));
    assert_eq!(s.get_document("heal/study-0001").unwrap().payload, json!({"title": "A"}));
}

#[test]
fn rejects_malformed_input() {
    let s = store();
    assert!(matches!(
        s.create_document("heal/x", json!([1, 2])),
        Err(MetadataError::MalformedPayload(_))
    ));
    assert!(matches!(
        s.create_document("heal/x", json!({"Bad-Block": 1})),
        Err(MetadataError::MalformedPayload(_))
    ));
    assert!(matches!(
        s.create_document("no-prefix", json!({})),
        Err(MetadataError::InvalidGuid(_))
    ));
    let big = "x".repeat(MAX_DOCUMENT_BYTES);
    assert!(matches!(
        s.create_document("heal/x", json!({"blob": big})),
        Err(MetadataError::MalformedPayload(_))
    ));
    s.create_document("heal/x", json!({})).unwrap();
    assert!(matches!(
        s.update_document("heal/x", "blob", json!(big)),
        Err(MetadataError::MalformedPayload(_))
    ));
    assert!(matches!(
        s.update_document("heal/x", "9lives", json!(1)),
        Err(MetadataError::MalformedPayload(_))
    ));
    assert!(matches!(
        s.update_document("heal/missing", "slmd", json!(1)),
        Err(MetadataError::UnknownGuid(_))
    ));
    assert!(matches!(s.get_document("heal/missing"), Err(MetadataError::UnknownGuid(_))));
    assert_eq!(s.get_document("heal/x").unwrap().version, 1);
}

#[test]
fn update_replaces_only_the_named_block() {
    let s = store();
    s.create_document(
        "heal/s1",
        json!({"grant_source": {"award": "A1", "pi": ["x", "y"]}, "slmd": {"v": 1}}),
    )
    .unwrap();
    let before = canonical_json(&s.get_document("heal/s1").unwrap().payload["grant_source"]);
    let doc = s.update_document("heal/s1", "slmd", json!({"v": 2})).unwrap();
    assert_eq!(doc.version, 2);
    assert_eq!(doc.block("slmd"), Some(&json!({"v": 2})));
    assert_eq!(canonical_json(doc.block("grant_source").unwrap()), before);

    // identical content is still a write at this layer
    let doc = s.update_document("heal/s1", "slmd", json!({"v": 2})).unwrap();
    assert_eq!(doc.version, 3);
}

#[test]
fn version_counts_every_write() {
    let s = store();
    s.create_document("heal/s", json!({})).unwrap();
    let mut writes = 1;
    for i in 0..100 {
        s.update_document("heal/s", "slmd", json!({"i": i})).unwrap();
        writes += 1;
    }
    assert_eq!(writes, 101);
    assert_eq!(s.get_document("heal/s").unwrap().version, writes);

    s.create_document("heal/t", json!({})).unwrap();
    for i in 0..3 {
        s.update_document("heal/t", "slmd", json!(i)).unwrap();
    }
    assert_eq!(s.get_document("heal/t").unwrap().version, 4);
}

#[test]
fn timestamps_follow_the_clock() {
    let clock = ManualClock::at_default_epoch();
    let s = MetadataStore::in_memory(Arc::new(clock.clone()));
    let created = s.create_document("heal/s", json!({})).unwrap().created_at;
    clock.advance_secs(10);
    let doc = s.update_document("heal/s", "slmd", json!({})).unwrap();
    assert_eq!(doc.created_at, created);
    assert_eq!((doc.updated_at - created).num_seconds(), 10);
}

fn ten_doc_fixture(s: &MetadataStore) {
    for i in 0..10 {
        let repo = if i % 3 == 0 { "repoA" } else { "repoB" };
        s.create_document(
            &format!("heal/doc-{i:02}"),
            json!({"repository": {"name": repo}, "grant_source": {"title": format!("Study {i}")}}),
        )
        .unwrap();
    }
}

#[test]
fn query_by_path_equality() {
    let s = store();
    ten_doc_fixture(&s);
    let q = MetadataQuery::all().filter(PathFilter::equals("repository.name", "repoA").unwrap());
    let hits = s.query_documents(&q).unwrap();
    let oracle: Vec<String> = s
        .snapshot()
        .into_iter()
        .filter(|d| d.payload["repository"]["name"] == "repoA")
        .map(|d| d.guid)
        .collect();
    assert_eq!(oracle.len(), 4);
    assert_eq!(hits.iter().map(|d| d.guid.clone()).collect::<Vec<_>>(), oracle);
}

#[test]
fn empty_query_returns_everything_in_guid_order() {
    let s = store();
    for g in ["heal/c", "heal/a", "heal/b"] {
        s.create_document(g, json!({})).unwrap();
    }
    let guids: Vec<_> = s
        .query_documents(&MetadataQuery::all())
        .unwrap()
        .into_iter()
        .map(|d| d.guid)
        .collect();
    assert_eq!(guids, ["heal/a", "heal/b", "heal/c"]);

    let page: Vec<_> = s
        .query_documents(&MetadataQuery::all().page(1, 1))
        .unwrap()
        .into_iter()
        .map(|d| d.guid)
        .collect();
    assert_eq!(page, ["heal/b"]);
    assert!(matches!(
        s.query_documents(&MetadataQuery::all().page(1001, 0)),
        Err(MetadataError::InvalidQuery(_))
    ));
}

#[test]
fn exists_counts_table1_slmd_documents() {
    // Overview scale: 1,078 searchable studies, 398 with study-level metadata.
    let s = store();
    for i in 0..1078 {
        let mut payload = json!({"grant_source": {"n": i}});
        if i < 398 {
            payload["slmd"] = json!({"objectives": {"primary_objective": "x"}});
        }
        s.create_document(&format!("heal/study-{i:04}"), payload).unwrap();
    }
    assert_eq!(s.count(), 1078);
    let q = MetadataQuery::all().filter(PathFilter::exists("slmd").unwrap());
    assert_eq!(s.query_documents(&q).unwrap().len(), 398);
}

#[test]
fn journal_replay_restores_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metadata.jsonl");
    let clock: SharedClock = Arc::new(ManualClock::at_default_epoch());
    let s = MetadataStore::open(&path, clock.clone()).unwrap();
    s.create_document("heal/a", json!({"grant_source": {"t": "x"}})).unwrap();
    s.update_document("heal/a", "slmd", json!({"k": [1, 2.5, null]})).unwrap();
    s.create_document("heal/b", json!({})).unwrap();
    let before = s.snapshot();
    let hash = s.content_hash();
    drop(s);

    let lines: Vec<Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    let keys: BTreeSet<&str> = lines[1].as_object().unwrap().keys().map(|k| k.as_str()).collect();
    assert_eq!(keys, BTreeSet::from(["guid", "version", "block", "subtree", "ts"]));
    assert_eq!(lines[1]["block"], "slmd");
    assert_eq!(lines[1]["version"], 2);

    let reopened = MetadataStore::open(&path, clock).unwrap();
    assert_eq!(reopened.snapshot(), before);
    assert_eq!(reopened.content_hash(), hash);
    reopened.update_document("heal/b", "slmd", json!(1)).unwrap();
    assert_eq!(reopened.get_document("heal/b").unwrap().version, 2);
}

#[test]
fn concurrent_writers_to_one_guid_are_serialized() {
    let s = Arc::new(store());
    s.create_document("heal/hot", json!({})).unwrap();
    let (writers, updates) = (8, 50);
    let observed: Vec<u64> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..writers)
            .map(|w| {
                let s = Arc::clone(&s);
                scope.spawn(move || {
                    (0..updates)
                        .map(|i| {
                            s.update_document("heal/hot", "slmd", json!({"w": w, "i": i}))
                                .unwrap()
                                .version
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let final_version = s.get_document("heal/hot").unwrap().version;
    assert_eq!(final_version, (writers * updates) as u64 + 1);
    let distinct: BTreeSet<u64> = observed.iter().copied().collect();
    assert_eq!(distinct.len(), observed.len());
    assert_eq!(distinct, (2..=final_version).collect());
}

#[test]
fn reads_need_no_credentials() {
    // The API has no credential parameter at all; this pins that shape.
    let s = store();
    s.create_document("heal/open", json!({"slmd": {}})).unwrap();
    let _: MetadataDocument = s.get_document("heal/open").unwrap();
    let _: Vec<MetadataDocument> = s.query_documents(&MetadataQuery::all()).unwrap();
}

// Independent oracle: flattens every node to its textual path and evaluates
// predicates against that table instead of walking paths.
fn flatten(prefix: String, v: &Value, out: &mut BTreeMap<String, Value>) {
    if !prefix.is_empty() {
        out.insert(prefix.clone(), v.clone());
    }
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(p, child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(format!("{prefix}[{i}]"), child, out);
            }
        }
        _ => {}
    }
}

fn oracle_matches(q: &MetadataQuery, payload: &Value) -> bool {
    let mut flat = BTreeMap::new();
    flatten(String::new(), payload, &mut flat);
    let filters_ok = q.path_filters.iter().all(|f| {
        let node = flat.get(&f.path.to_string());
        match (&f.predicate, node) {
            (Predicate::Exists, Some(v)) => *v != Value::Null,
            (Predicate::Equals(want), Some(v)) => v == want,
            (Predicate::Contains(Value::String(n)), Some(Value::String(h))) => h.contains(n.as_str()),
            (Predicate::Contains(want), Some(Value::Array(items))) => items.iter().any(|i| i == want),
            _ => false,
        }
    });
    let text_ok = match q.free_text.as_deref().map(str::trim) {
        None | Some("") => true,
        Some(t) => flat.values().any(|v| {
            v.as_str()
                .is_some_and(|s| s.to_lowercase().contains(&t.to_lowercase()))
        }),
    };
    filters_ok && text_ok
}

fn arb_payload() -> impl Strategy<Value = Value> {
    (
        prop::sample::select(vec!["repoA", "repoB", "repoC"]),
        prop::option::of(prop::sample::select(vec!["observational", "interventional"])),
        prop::collection::vec(prop::sample::select(vec!["pain", "opioid", "sleep", "mood"]), 0..3),
        "[a-z ]{0,12}",
    )
        .prop_map(|(repo, study_type, tags, title)| {
            let mut v = json!({
                "repository": {"name": repo},
                "grant_source": {"title": title, "tags": tags},
            });
            if let Some(t) = study_type {
                v["slmd"] = json!({"design": {"study_type": t}});
            }
            v
        })
}

fn arb_query() -> impl Strategy<Value = MetadataQuery> {
    let filter = prop_oneof![
        prop::sample::select(vec!["repoA", "repoB", "repoZ"])
            .prop_map(|r| PathFilter::equals("repository.name", r).unwrap()),
        Just(PathFilter::exists("slmd").unwrap()),
        Just(PathFilter::exists("slmd.design.study_type").unwrap()),
        prop::sample::select(vec!["pain", "opioid"])
            .prop_map(|t| PathFilter::contains("grant_source.tags", t).unwrap()),
        prop::sample::select(vec!["a", "e", "zz"])
            .prop_map(|t| PathFilter::contains("grant_source.title", t).unwrap()),
        Just(PathFilter::equals("grant_source.tags[0]", "sleep").unwrap()),
    ];
    (
        prop::collection::vec(filter, 0..3),
        prop::option::of(prop::sample::select(vec!["a", "B", "sl", "o p"])),
        0usize..30,
        0usize..5,
    )
        .prop_map(|(path_filters, text, limit, offset)| MetadataQuery {
            path_filters,
            free_text: text.map(String::from),
            limit: Some(limit),
            offset,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn query_matches_linear_scan(payloads in prop::collection::vec(arb_payload(), 0..60), q in arb_query()) {
        let s = store();
        for (i, p) in payloads.iter().enumerate() {
            s.create_document(&format!("heal/d{:03}", (i * 37) % 1000), p.clone()).ok();
        }
        let got: Vec<String> = s.query_documents(&q).unwrap().into_iter().map(|d| d.guid).collect();
        let want: Vec<String> = s.snapshot().into_iter()
            .filter(|d| oracle_matches(&q, &d.payload))
            .map(|d| d.guid)
            .skip(q.offset)
            .take(q.limit.unwrap())
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn payload_round_trips_through_serialization(p in arb_payload()) {
        let s = store();
        let doc = s.create_document("heal/rt", p).unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        let back: MetadataDocument = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}

#[test]
fn upsert_block_writes_only_on_change() {
    let store = MetadataStore::in_memory(Arc::new(ManualClock::at_default_epoch()));
    let (o, d) = store.upsert_block("heal/u1", "grant_source", json!({"a": 1, "b": [1, 2]})).unwrap();
    assert_eq!((o, d.version), (WriteOutcome::Created, 1));
    let (o, d) = store.upsert_block("heal/u1", "grant_source", json!({"b": [1, 2], "a": 1})).unwrap();
    assert_eq!((o, d.version), (WriteOutcome::Unchanged, 1));
    let (o, d) = store.upsert_block("heal/u1", "grant_source", json!({"a": 2, "b": [1, 2]})).unwrap();
    assert_eq!((o, d.version), (WriteOutcome::Updated, 2));
    let (o, d) = store.upsert_block("heal/u1", "slmd", json!({})).unwrap();
    assert_eq!((o, d.version), (WriteOutcome::Updated, 3));
    assert_eq!(d.block("grant_source"), Some(&json!({"a": 2, "b": [1, 2]})));
}
