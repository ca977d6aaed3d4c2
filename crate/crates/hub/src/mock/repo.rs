use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Duration;
use meshhub_core::clock::SharedClock;
use meshhub_core::gateway::{
    AccessDecision, BucketObject, BucketUrlSigner, RemoteObject, Tier, UsageDigest,
};
use meshhub_core::pid::AccessMethod;
use serde_json::json;

use super::content::{object_bytes, sha256_of_object};
use crate::connector::{AccessRequest, RepoIdentity, RepoToken, IDEMPOTENCY_HEADER};

/// Maps a hub-issued bearer token to its user, standing in for the
/// repository's trust in the mesh identity provider.
pub type TokenCheck = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockObject {
    pub key: String,
    pub size_bytes: u64,
    pub controlled: bool,
    pub sha256: String,
    pub pid: Option<String>,
}

impl MockObject {
    pub fn new(key: &str, size_bytes: u64, controlled: bool) -> Self {
        Self {
            key: key.to_string(),
            size_bytes,
            controlled,
            sha256: sha256_of_object(key, size_bytes),
            pid: None,
        }
    }
}

/// What a repository's report sink has seen.
#[derive(Debug, Default, Clone)]
pub struct SinkLog {
    pub posts: u64,
    pub duplicates: u64,
    pub digests: BTreeMap<String, UsageDigest>,
}

pub struct MockRepo {
    pub repository_id: String,
    pub tier: Tier,
    pub base_url: String,
    pub bucket_name: String,
    objects: RwLock<Vec<MockObject>>,
    /// Users this repository authorizes for controlled objects.
    grants: RwLock<BTreeSet<String>>,
    token_check: TokenCheck,
    own_signer: BucketUrlSigner,
    hub_signer: BucketUrlSigner,
    clock: SharedClock,
    issued: Mutex<BTreeMap<String, String>>,
    token_seq: AtomicU64,
    sink: Mutex<SinkLog>,
    sink_failures: AtomicU32,
    down: AtomicBool,
    omit_checksums: AtomicBool,
    bytes_served: AtomicU64,
}

impl std::fmt::Debug for MockRepo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockRepo")
            .field("repository_id", &self.repository_id)
            .field("tier", &self.tier)
            .field("base_url", &self.base_url)
            .finish_non_exhaustive()
    }
}

impl MockRepo {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        repository_id: &str,
        tier: Tier,
        base_url: String,
        objects: Vec<MockObject>,
        token_check: TokenCheck,
        hub_signer: BucketUrlSigner,
        clock: SharedClock,
    ) -> Self {
        Self {
            repository_id: repository_id.to_string(),
            tier,
            bucket_name: format!("{repository_id}-bucket"),
            base_url,
            objects: RwLock::new(objects),
            grants: RwLock::default(),
            token_check,
            own_signer: BucketUrlSigner::new(format!("repo-key-{repository_id}").into_bytes()),
            hub_signer,
            clock,
            issued: Mutex::default(),
            token_seq: AtomicU64::new(0),
            sink: Mutex::default(),
            sink_failures: AtomicU32::new(0),
            down: AtomicBool::new(false),
            omit_checksums: AtomicBool::new(false),
            bytes_served: AtomicU64::new(0),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url, path.trim_start_matches('/'))
    }

    /// The locator a FULL_API repository hands out for its own objects.
    pub fn locator(&self, key: &str) -> String {
        self.url(&format!("data/files/{key}"))
    }

    pub fn access_method(&self, obj: &MockObject) -> AccessMethod {
        match self.tier {
            Tier::FullApi => AccessMethod::repo_api(self.locator(&obj.key), obj.controlled),
            _ => AccessMethod::bucket(&self.bucket_name, &obj.key, obj.controlled),
        }
    }

    pub fn objects(&self) -> Vec<MockObject> {
        self.objects.read().unwrap().clone()
    }

    pub fn assign_pid(&self, key: &str, pid: &str) {
        if let Some(o) = self.objects.write().unwrap().iter_mut().find(|o| o.key == key) {
            o.pid = Some(pid.to_string());
        }
    }

    pub fn set_grants(&self, users: impl IntoIterator<Item = String>) {
        *self.grants.write().unwrap() = users.into_iter().collect();
    }

    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }

    pub fn set_omit_checksums(&self, omit: bool) {
        self.omit_checksums.store(omit, Ordering::SeqCst);
    }

    /// The next `n` report posts are stored but answered with 503, as if
    /// the acknowledgement were lost.
    pub fn fail_next_reports(&self, n: u32) {
        self.sink_failures.store(n, Ordering::SeqCst);
    }

    pub fn sink_log(&self) -> SinkLog {
        self.sink.lock().unwrap().clone()
    }

    pub fn bytes_served(&self) -> u64 {
        self.bytes_served.load(Ordering::SeqCst)
    }

    fn by_pid(&self, pid: &str) -> Option<MockObject> {
        self.objects.read().unwrap().iter().find(|o| o.pid.as_deref() == Some(pid)).cloned()
    }

    fn by_key(&self, key: &str) -> Option<MockObject> {
        self.objects.read().unwrap().iter().find(|o| o.key == key).cloned()
    }

    fn checksums(&self, o: &MockObject) -> BTreeMap<String, String> {
        if self.omit_checksums.load(Ordering::SeqCst) {
            BTreeMap::new()
        } else {
            BTreeMap::from([("sha256".to_string(), o.sha256.clone())])
        }
    }

    pub fn router(self: &Arc<Self>) -> Router {
        let mut r = Router::new().route("/sink", post(sink));
        if matches!(self.tier, Tier::FullApi | Tier::MetadataOnly) {
            r = r
                .route("/metadata/objects", get(list_objects))
                .route("/metadata/objects/{*pid}", get(object_metadata));
        }
        if self.tier == Tier::FullApi {
            r = r
                .route("/data/objects/{*pid}", get(object_access))
                .route("/data/access", post(access))
                .route("/data/files/{*key}", get(own_file))
                .route("/auth/token", post(issue_token))
                .route("/auth/validate", get(validate_token));
        } else {
            r = r
                .route("/bucket/{bucket}", get(list_bucket))
                .route("/bucket/{bucket}/{*key}", get(bucket_file));
        }
        r.layer(middleware::from_fn_with_state(self.clone(), outage))
            .with_state(self.clone())
    }
}

type Repo = State<Arc<MockRepo>>;

async fn outage(State(repo): Repo, req: Request, next: Next) -> Response {
    if repo.down.load(Ordering::SeqCst) {
        return (StatusCode::SERVICE_UNAVAILABLE, "repository offline").into_response();
    }
    next.run(req).await
}

fn not_found(what: &str) -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": format!("{what} not found") }))).into_response()
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
}

async fn list_objects(State(repo): Repo) -> Json<Vec<RemoteObject>> {
    Json(
        repo.objects()
            .iter()
            .map(|o| RemoteObject {
                pid: o.pid.clone(),
                key: o.key.clone(),
                size_bytes: o.size_bytes,
                checksums: repo.checksums(o),
            })
            .collect(),
    )
}

async fn object_metadata(State(repo): Repo, Path(pid): Path<String>) -> Response {
    match repo.by_pid(&pid) {
        Some(o) => Json(json!({
            "pid": pid,
            "title": format!("{} / {}", repo.repository_id, o.key),
            "key": o.key,
            "size_bytes": o.size_bytes,
            "checksums": repo.checksums(&o),
            "controlled": o.controlled,
        }))
        .into_response(),
        None => not_found(&pid),
    }
}

async fn object_access(State(repo): Repo, Path(pid): Path<String>) -> Response {
    match repo.by_pid(&pid) {
        Some(o) => Json(vec![repo.access_method(&o)]).into_response(),
        None => not_found(&pid),
    }
}

/// The repository's own authorization decision for a hub-forwarded request.
async fn access(State(repo): Repo, headers: HeaderMap, Json(req): Json<AccessRequest>) -> Response {
    let Some(user) = bearer(&headers).and_then(|t| (repo.token_check)(t)) else {
        return (StatusCode::UNAUTHORIZED, "token not accepted").into_response();
    };
    let Some(key) = req.locator.strip_prefix(&repo.locator("")) else {
        return not_found(&req.locator);
    };
    let Some(obj) = repo.by_key(key) else {
        return not_found(key);
    };
    let decision = if obj.controlled && !repo.grants.read().unwrap().contains(&user) {
        AccessDecision::Denied { reason: format!("{user} has no approved access to {key}") }
    } else {
        let expires_at = repo.clock.now() + Duration::seconds(300);
        let url = repo
            .own_signer
            .sign(&repo.url("data"), "files", key, &user, expires_at);
        AccessDecision::Granted { url, expires_at }
    };
    Json(decision).into_response()
}

async fn issue_token(State(repo): Repo, Json(who): Json<RepoIdentity>) -> Json<RepoToken> {
    let n = repo.token_seq.fetch_add(1, Ordering::SeqCst);
    let token = format!("{}-tok-{n}", repo.repository_id);
    repo.issued.lock().unwrap().insert(token.clone(), who.user_id);
    Json(RepoToken { token })
}

async fn validate_token(State(repo): Repo, headers: HeaderMap) -> Response {
    let user = bearer(&headers).and_then(|t| repo.issued.lock().unwrap().get(t).cloned());
    match user {
        Some(user_id) => Json(RepoIdentity { user_id }).into_response(),
        None => (StatusCode::UNAUTHORIZED, "unknown token").into_response(),
    }
}

async fn list_bucket(State(repo): Repo, Path(bucket): Path<String>) -> Response {
    if bucket != repo.bucket_name {
        return not_found(&bucket);
    }
    let listed: Vec<BucketObject> = repo
        .objects()
        .iter()
        .map(|o| BucketObject { key: o.key.clone(), size_bytes: o.size_bytes })
        .collect();
    Json(listed).into_response()
}

async fn own_file(State(repo): Repo, uri: Uri, headers: HeaderMap) -> Response {
    let url = repo.url(&uri.to_string());
    match repo.own_signer.verify(&repo.url("data"), &url, repo.clock.now()) {
        Ok(req) if req.bucket == "files" => serve(&repo, &req.key, &headers),
        Ok(_) => not_found("bucket"),
        Err(e) => (StatusCode::FORBIDDEN, e.to_string()).into_response(),
    }
}

async fn bucket_file(State(repo): Repo, uri: Uri, headers: HeaderMap) -> Response {
    let url = repo.url(&uri.to_string());
    match repo.hub_signer.verify(&repo.url("bucket"), &url, repo.clock.now()) {
        Ok(req) if req.bucket == repo.bucket_name => serve(&repo, &req.key, &headers),
        Ok(req) => not_found(&req.bucket),
        Err(e) => (StatusCode::FORBIDDEN, e.to_string()).into_response(),
    }
}

/// Parses a single `bytes=a-b` range against an object of `len` bytes.
fn parse_range(raw: &str, len: u64) -> Option<(u64, u64)> {
    let spec = raw.strip_prefix("bytes=")?;
    let (a, b) = spec.split_once('-')?;
    let (start, end) = match (a.trim(), b.trim()) {
        ("", suffix) => {
            let n: u64 = suffix.parse().ok()?;
            (len.saturating_sub(n), len.checked_sub(1)?)
        }
        (a, "") => (a.parse().ok()?, len.checked_sub(1)?),
        (a, b) => (a.parse().ok()?, b.parse::<u64>().ok()?.min(len.checked_sub(1)?)),
    };
    (start <= end && end < len).then_some((start, end))
}

fn serve(repo: &MockRepo, key: &str, headers: &HeaderMap) -> Response {
    let Some(obj) = repo.by_key(key) else {
        return not_found(key);
    };
    let bytes = object_bytes(&obj.key, obj.size_bytes);
    let range = headers.get(header::RANGE).and_then(|v| v.to_str().ok());
    let (status, body, content_range) = match range {
        None => (StatusCode::OK, bytes, None),
        Some(raw) => match parse_range(raw, obj.size_bytes) {
            Some((s, e)) => (
                StatusCode::PARTIAL_CONTENT,
                bytes[s as usize..=e as usize].to_vec(),
                Some(format!("bytes {s}-{e}/{}", obj.size_bytes)),
            ),
            None => {
                return (
                    StatusCode::RANGE_NOT_SATISFIABLE,
                    [(header::CONTENT_RANGE, format!("bytes */{}", obj.size_bytes))],
                )
                    .into_response()
            }
        },
    };
    repo.bytes_served.fetch_add(body.len() as u64, Ordering::SeqCst);
    let mut resp = (status, body).into_response();
    if let Some(cr) = content_range {
        resp.headers_mut()
            .insert(header::CONTENT_RANGE, cr.parse().expect("ascii header"));
    }
    resp
}

async fn sink(State(repo): Repo, headers: HeaderMap, Json(digest): Json<UsageDigest>) -> Response {
    let Some(key) = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()) else {
        return (StatusCode::BAD_REQUEST, "missing idempotency key").into_response();
    };
    {
        let mut log = repo.sink.lock().unwrap();
        log.posts += 1;
        if log.digests.insert(key.to_string(), digest).is_some() {
            log.duplicates += 1;
        }
    }
    let lose_ack = repo
        .sink_failures
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    if lose_ack {
        (StatusCode::SERVICE_UNAVAILABLE, "try again").into_response()
    } else {
        StatusCode::NO_CONTENT.into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::parse_range;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("bytes=0-9", 100), Some((0, 9)));
        assert_eq!(parse_range("bytes=90-", 100), Some((90, 99)));
        assert_eq!(parse_range("bytes=-10", 100), Some((90, 99)));
        assert_eq!(parse_range("bytes=50-500", 100), Some((50, 99)));
        assert_eq!(parse_range("bytes=100-", 100), None);
        assert_eq!(parse_range("bytes=5-2", 100), None);
        assert_eq!(parse_range("items=0-1", 100), None);
    }
}
