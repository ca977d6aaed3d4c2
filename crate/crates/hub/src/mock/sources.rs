use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::Value;

#[derive(Debug, Clone)]
enum Feed {
    Records(Vec<Value>),
    Html(String),
}

/// External metadata sources served at `/mock/{kind}/records`.
///
/// With `?key=K` only records holding `K` in some top-level field are
/// returned, which is how keyed registries answer lookups.
#[derive(Debug, Default)]
pub struct MockSources {
    feeds: RwLock<BTreeMap<String, Feed>>,
    down: RwLock<BTreeSet<String>>,
    requests: AtomicU64,
}

impl MockSources {
    pub fn set_records(&self, kind: &str, records: Vec<Value>) {
        self.feeds.write().unwrap().insert(kind.to_string(), Feed::Records(records));
    }

    pub fn set_html(&self, kind: &str, html: &str) {
        self.feeds.write().unwrap().insert(kind.to_string(), Feed::Html(html.to_string()));
    }

    pub fn records(&self, kind: &str) -> Vec<Value> {
        match self.feeds.read().unwrap().get(kind) {
            Some(Feed::Records(r)) => r.clone(),
            _ => Vec::new(),
        }
    }

    pub fn set_down(&self, kind: &str, down: bool) {
        let mut set = self.down.write().unwrap();
        if down {
            set.insert(kind.to_string());
        } else {
            set.remove(kind);
        }
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/mock/{kind}/records", get(records))
            .with_state(self.clone())
    }
}

fn holds_key(record: &Value, key: &str) -> bool {
    record.as_object().is_some_and(|m| {
        m.values().any(|v| match v {
            Value::String(s) => s == key,
            Value::Number(n) => n.to_string() == key,
            _ => false,
        })
    })
}

async fn records(
    State(src): State<Arc<MockSources>>,
    Path(kind): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    src.requests.fetch_add(1, Ordering::SeqCst);
    if src.down.read().unwrap().contains(&kind) {
        return (StatusCode::SERVICE_UNAVAILABLE, "source offline").into_response();
    }
    let feed = src.feeds.read().unwrap().get(&kind).cloned();
    match feed {
        None => (StatusCode::NOT_FOUND, "no such source").into_response(),
        Some(Feed::Html(html)) => ([(header::CONTENT_TYPE, "text/html")], html).into_response(),
        Some(Feed::Records(all)) => {
            let out: Vec<Value> = match q.get("key") {
                Some(k) => all.into_iter().filter(|r| holds_key(r, k)).collect(),
                None => all,
            };
            Json(out).into_response()
        }
    }
}
