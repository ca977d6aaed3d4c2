//! The hub's HTTP JSON API.
//!
//! Reads of metadata, PIDs, studies and search are public. Mutations need a
//! bearer token carrying the `write` scope plus the hub role the operation
//! calls for. Core calls that may reach the network run on the blocking pool.

mod access;
mod catalog;
mod error;
mod search;
mod studies;

use std::sync::Arc;

use axum::extract::{FromRequest, Request, State};
use axum::http::{header, HeaderMap};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use meshhub_core::auth::{AuthToken, Role};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

pub use error::{ApiError, ApiResult};

use crate::hub::Hub;

pub(crate) type HubState = State<Arc<Hub>>;

pub fn router(hub: Arc<Hub>) -> Router {
    let mut r = Router::new()
        .route("/health", get(health))
        .route("/metadata", get(catalog::query_metadata))
        .route(
            "/metadata/{*rest}",
            get(catalog::get_metadata).post(catalog::create_metadata).put(catalog::update_block),
        )
        .route("/index", get(catalog::list_index).post(catalog::mint))
        .route("/index/{*pid}", get(catalog::resolve))
        .route("/auth/token", post(access::token))
        .route("/auth/workspace", post(access::workspace))
        .route("/auth/validate", get(access::validate))
        .route("/auth/policy", post(access::policy))
        .route("/auth/check", get(access::check))
        .route("/data/{*rest}", get(access::data_url))
        .route("/repositories", get(access::list_repositories).post(access::register_repository))
        .route("/repositories/{id}", get(access::get_repository))
        .route("/repositories/{id}/conformance", get(access::conformance))
        .route("/repositories/{id}/allow_list", put(access::allow_list))
        .route("/repositories/{id}/usage", get(access::usage))
        .route("/repositories/{id}/usage/deliver", post(access::deliver))
        .route("/adapters/sources", get(studies::list_sources).post(studies::register_source))
        .route("/adapters/{id}/run", post(studies::run_source))
        .route("/adapters/runs", get(studies::runs))
        .route("/studies", get(studies::list_studies).post(studies::seed_studies))
        .route("/studies/{*rest}", get(studies::get_study).post(studies::study_action))
        .route("/search", get(search::search))
        .route("/facets", get(search::facets))
        .route("/stats", get(search::stats));
    if hub.options.mock_idp {
        r = r.route("/mock-idp/login", post(access::mock_login));
    }
    r.with_state(hub)
}

async fn health(State(hub): HubState) -> Json<Value> {
    Json(json!({ "status": "ok", "documents": hub.store.count() }))
}

/// Runs `f` on the blocking pool.
pub(crate) async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

/// A JSON body whose rejections use the API error shape.
pub(crate) struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rej) => Err(ApiError::bad_request(rej.body_text())),
        }
    }
}

pub(crate) fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_string())
}

pub(crate) fn authenticate(hub: &Hub, headers: &HeaderMap) -> ApiResult<AuthToken> {
    let raw = bearer(headers).ok_or_else(|| ApiError::unauthenticated("bearer token required"))?;
    Ok(hub.auth.validate_token(&raw)?)
}

/// Authenticates a mutation: the token must carry `write`.
pub(crate) fn writer(hub: &Hub, headers: &HeaderMap) -> ApiResult<AuthToken> {
    let token = authenticate(hub, headers)?;
    if !token.scopes.iter().any(|s| s == "write") {
        return Err(ApiError::forbidden("token lacks the write scope"));
    }
    Ok(token)
}

pub(crate) fn require_role(hub: &Hub, user: &str, path: &str, role: Role) -> ApiResult<()> {
    if hub.auth.check_access(user, path, role)? {
        Ok(())
    } else {
        Err(ApiError::forbidden(format!("{user} lacks {role} on {path}")))
    }
}

/// Repeated query keys are kept, in order.
pub(crate) fn query_pairs(raw: Option<&str>) -> Vec<(String, String)> {
    url::form_urlencoded::parse(raw.unwrap_or("").as_bytes())
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect()
}

pub(crate) fn parse_usize(name: &str, v: &str) -> ApiResult<usize> {
    v.parse()
        .map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer")))
}
