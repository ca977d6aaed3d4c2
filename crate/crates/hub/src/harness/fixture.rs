//! Seed profiles. Every write goes through the real services, so the
//! resulting counts are whatever those services report.

use std::collections::BTreeSet;
use std::str::FromStr;

use meshhub_core::auth::Principal;
use meshhub_core::gateway::Tier;
use meshhub_core::registration::RegistrationService;
use meshhub_core::search::OverviewStats;
use meshhub_core::vlmd::{infer_from_csv_bytes, InferOptions};
use serde_json::{json, Value};

use super::{HarnessError, Mesh, ADMIN_USER};
use crate::mock::MockObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Tiny,
    Table1,
}

impl FromStr for Profile {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(Profile::Tiny),
            "table1" => Ok(Profile::Table1),
            other => Err(HarnessError::Script(format!("unknown profile {other:?} (tiny, table1)"))),
        }
    }
}

struct Shape {
    repos: usize,
    objects: usize,
    awards: usize,
    claimed: usize,
    slmd: usize,
    vlmd: usize,
    investigators: usize,
}

impl Profile {
    fn shape(self) -> Shape {
        match self {
            Profile::Tiny => Shape { repos: 2, objects: 5, awards: 10, claimed: 4, slmd: 3, vlmd: 1, investigators: 2 },
            Profile::Table1 => Shape {
                repos: 19,
                objects: 118,
                awards: 1078,
                claimed: 516,
                slmd: 398,
                vlmd: 74,
                investigators: 40,
            },
        }
    }
}

const INSTITUTES: [&str; 7] = ["NIDA", "NIAAA", "NINDS", "NCCIH", "NIMH", "NIA", "NICHD"];
const TOPICS: [&str; 8] = [
    "chronic low back pain",
    "opioid use disorder",
    "neonatal opioid withdrawal",
    "fibromyalgia",
    "sickle cell pain",
    "post-surgical pain",
    "overdose prevention",
    "migraine",
];
const STUDY_TYPES: [&str; 6] = [
    "observational",
    "interventional",
    "qualitative",
    "mixed_methods",
    "secondary_analysis",
    "other",
];
const METHODS: [&str; 4] = ["survey", "ehr", "imaging", "wearable"];

pub fn award_number(i: usize) -> String {
    format!("U24DA{i:06}")
}

pub fn investigator(i: usize) -> String {
    format!("investigator-{i:03}")
}

pub fn repo_id(i: usize) -> String {
    format!("repo-{i:02}")
}

/// FULL_API, METADATA_ONLY and BUCKET_ONLY in rotation.
pub fn tier_of(i: usize) -> Tier {
    Tier::ALL[i % 3]
}

fn grant(i: usize) -> Value {
    json!({
        "award_number": award_number(i),
        "title": format!("HEAL study {i}: {}", TOPICS[i % TOPICS.len()]),
        "institute": INSTITUTES[i % INSTITUTES.len()],
        "fiscal_year": 2019 + (i % 6),
    })
}

fn slmd(i: usize) -> Value {
    let methods: Vec<&str> = METHODS.iter().enumerate().filter(|(k, _)| (i >> k) & 1 == 1).map(|(_, m)| *m).collect();
    json!({
        "title": format!("HEAL study {i}: {}", TOPICS[i % TOPICS.len()]),
        "objectives": { "primary_objective": format!("Characterize outcomes in {}", TOPICS[i % TOPICS.len()]) },
        "design": { "study_type": STUDY_TYPES[i % STUDY_TYPES.len()] },
        "population": { "description": "adults enrolled at participating sites", "sample_size": 50 + i },
        "data_collection_methods": methods,
    })
}

fn dictionary_csv(i: usize) -> String {
    let mut csv = String::from("participant_id,age,pain_score,visit_date,consented\n");
    for row in 0..12 {
        csv.push_str(&format!(
            "P{i}-{row},{},{},2024-0{}-1{},{}\n",
            20 + (row * 7 + i) % 50,
            (row + i) % 11,
            1 + row % 9,
            row % 10,
            if row % 2 == 0 { "true" } else { "false" }
        ));
    }
    csv
}

fn objects_for(repo: usize, shape: &Shape) -> Vec<MockObject> {
    let base = shape.objects / shape.repos;
    let extra = usize::from(repo < shape.objects % shape.repos);
    (0..base + extra)
        .map(|j| {
            let size = 4096 + ((repo * 31 + j * 17) % 64) as u64 * 512;
            MockObject::new(&format!("study-{repo:02}/file-{j:02}.csv"), size, j % 3 == 2)
        })
        .collect()
}

/// Refuses to touch a mesh that already holds data.
pub fn seed_fixture(mesh: &mut Mesh, profile: Profile) -> Result<OverviewStats, HarnessError> {
    let hub = mesh.hub.clone();
    let held = [
        ("documents", hub.store.count()),
        ("repositories", hub.registry.count()),
        ("pids", hub.pids.count()),
        ("studies", hub.registration.len()),
    ];
    if let Some((what, n)) = held.iter().find(|(_, n)| *n > 0) {
        return Err(HarnessError::NonEmptyStore(format!("{n} {what}")));
    }
    let shape = profile.shape();
    let users: Vec<String> = (0..shape.investigators).map(investigator).collect();
    for u in &users {
        hub.auth.register_user(Principal::new(u, "mock-idp"))?;
    }
    let allow: BTreeSet<String> = BTreeSet::from([investigator(0)]);
    for r in 0..shape.repos {
        mesh.spawn_mock_repo(&repo_id(r), tier_of(r), objects_for(r, &shape), allow.clone())?;
    }

    let awards = (0..shape.awards).map(|i| (award_number(i), grant(i))).collect();
    hub.registration.seed_from_awards(awards)?;
    let reg = &hub.registration;
    for i in 0..shape.claimed {
        let guid = RegistrationService::guid_for_award(&award_number(i));
        let owner = &users[i % users.len()];
        let token = reg.issue_claim_token(ADMIN_USER, &guid)?;
        reg.claim_study(owner, &guid, &token)?;
        if i < shape.slmd {
            reg.set_repository(owner, &guid, &repo_id(i % shape.repos))?;
            reg.submit_slmd(owner, &guid, slmd(i))?;
        }
        if i < shape.vlmd {
            let dict = infer_from_csv_bytes(dictionary_csv(i).as_bytes(), &InferOptions::default())
                .map_err(|e| HarnessError::step(format!("fixture dictionary: {e}")))?;
            reg.attach_vlmd(owner, &guid, &dict)?;
        }
    }
    hub.search.rebuild_index();
    Ok(hub.stats())
}
