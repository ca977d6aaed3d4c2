use std::collections::BTreeSet;

use meshhub_core::registration::StudyState;
use meshhub_core::search::SearchQuery;

use crate::hub::Hub;

/// Cross-service consistency checks. Returns one line per violation.
pub fn check_invariants(hub: &Hub) -> Vec<String> {
    let mut out = Vec::new();

    for rec in hub.registration.list(None) {
        let Ok(doc) = hub.store.get_document(&rec.guid) else {
            out.push(format!("{}: study without a document", rec.guid));
            continue;
        };
        let reg = doc.block("registration");
        let state = reg.and_then(|b| b.get("state")).and_then(|s| s.as_str());
        if state != Some(rec.state.as_str()) {
            out.push(format!("{}: registration block says {state:?}, record says {}", rec.guid, rec.state.as_str()));
        }
        if rec.state >= StudyState::Claimed && rec.owner.is_none() {
            out.push(format!("{}: claimed without an owner", rec.guid));
        }
        if rec.state >= StudyState::SlmdSubmitted && doc.block("slmd").is_none() {
            out.push(format!("{}: {} without an slmd block", rec.guid, rec.state.as_str()));
        }
        if rec.state >= StudyState::VlmdAttached && doc.block("vlmd").is_none() {
            out.push(format!("{}: {} without a vlmd block", rec.guid, rec.state.as_str()));
        }
    }

    let mut seen = BTreeSet::new();
    for rec in hub.pids.all() {
        if !seen.insert(rec.pid.clone()) {
            out.push(format!("{}: minted twice", rec.pid));
        }
        if !hub.registry.contains(&rec.repository_id) {
            out.push(format!("{}: unknown repository {}", rec.pid, rec.repository_id));
        }
        match hub.pids.resolve_pid(&rec.pid) {
            Ok(r) if r == rec => {}
            Ok(_) => out.push(format!("{}: resolves to a different record", rec.pid)),
            Err(e) => out.push(format!("{}: does not resolve: {e}", rec.pid)),
        }
    }

    let events = hub.gateway.usage().events();
    for day in hub.gateway.usage().days() {
        for repo in hub.registry.list() {
            let digest = hub.gateway.usage().digest(&repo.repository_id, day);
            let n = events
                .iter()
                .filter(|e| e.repository_id == repo.repository_id && e.timestamp.date_naive() == day)
                .count() as u64;
            if digest.total() != n {
                out.push(format!("{} {day}: digest counts {} of {n} events", repo.repository_id, digest.total()));
            }
        }
    }

    let s = hub.stats();
    if !(s.searchable_studies >= s.registered_studies
        && s.registered_studies >= s.studies_with_slmd
        && s.studies_with_slmd >= s.studies_with_vlmd)
    {
        out.push(format!("stats out of order: {s:?}"));
    }
    let index = hub.search.rebuild_index();
    match index.search(&SearchQuery::default()) {
        Ok(r) if r.total == hub.store.count() => {}
        Ok(r) => out.push(format!("index holds {} of {} documents", r.total, hub.store.count())),
        Err(e) => out.push(format!("empty query failed: {e}")),
    }
    out
}
