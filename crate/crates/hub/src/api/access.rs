use std::collections::{BTreeSet, HashMap};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::Json;
use chrono::NaiveDate;
use meshhub_core::auth::{AccessPolicy, Audience, AuthToken, Principal, Role};
use meshhub_core::gateway::{
    AccessUrl, ConformanceReport, DeliveryReceipt, RepositoryDescriptor, UsageDigest,
};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{authenticate, bearer, blocking, require_role, writer, ApiError, ApiResult, Body, HubState};

pub const MOCK_IDP: &str = "mock-idp";

#[derive(Debug, Deserialize)]
pub struct Login {
    pub username: String,
}

/// Development identity provider: any username logs in and receives a
/// portal token with every default scope.
pub async fn mock_login(State(hub): HubState, Body(login): Body<Login>) -> ApiResult<Json<AuthToken>> {
    hub.auth.register_user(Principal::new(&login.username, MOCK_IDP))?;
    let scopes = ["read", "write", "data"].map(String::from);
    Ok(Json(hub.auth.issue_token(&login.username, &scopes, Audience::Portal)?))
}

#[derive(Debug, Deserialize)]
pub struct TokenRequest {
    #[serde(default)]
    pub scopes: Vec<String>,
    #[serde(default = "api_audience")]
    pub audience: Audience,
}

fn api_audience() -> Audience {
    Audience::Api
}

pub async fn token(
    State(hub): HubState,
    headers: HeaderMap,
    Body(req): Body<TokenRequest>,
) -> ApiResult<Json<AuthToken>> {
    let caller = authenticate(&hub, &headers)?;
    Ok(Json(hub.auth.issue_token(&caller.user_id, &req.scopes, req.audience)?))
}

pub async fn workspace(State(hub): HubState, headers: HeaderMap) -> ApiResult<Json<AuthToken>> {
    let caller = authenticate(&hub, &headers)?;
    Ok(Json(hub.auth.workspace_token(&caller.user_id)?))
}

pub async fn validate(State(hub): HubState, headers: HeaderMap) -> ApiResult<Json<AuthToken>> {
    let mut t = authenticate(&hub, &headers)?;
    t.token.clear();
    Ok(Json(t))
}

/// Granting on a path needs hub_admin on that path.
pub async fn policy(
    State(hub): HubState,
    headers: HeaderMap,
    Body(p): Body<AccessPolicy>,
) -> ApiResult<(StatusCode, Json<AccessPolicy>)> {
    let caller = writer(&hub, &headers)?;
    require_role(&hub, &caller.user_id, &p.resource_path, Role::HubAdmin)?;
    hub.auth.grant(p.clone())?;
    Ok((StatusCode::CREATED, Json(p)))
}

#[derive(Debug, Deserialize)]
pub struct CheckQuery {
    pub user: String,
    pub path: String,
    pub role: String,
}

pub async fn check(State(hub): HubState, Query(q): Query<CheckQuery>) -> ApiResult<Json<Value>> {
    let role: Role = q.role.parse()?;
    let allowed = hub.auth.check_access(&q.user, &q.path, role)?;
    Ok(Json(json!({ "user": q.user, "path": q.path, "role": role, "allowed": allowed })))
}

/// `GET /data/{pid}/url`
pub async fn data_url(
    State(hub): HubState,
    Path(rest): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<AccessUrl>> {
    let pid = rest
        .strip_suffix("/url")
        .ok_or_else(|| ApiError::not_found("expected /data/{pid}/url"))?
        .to_string();
    let token = bearer(&headers).ok_or_else(|| ApiError::unauthenticated("bearer token required"))?;
    let url = blocking(move || Ok(hub.gateway.fetch_access_url(&token, &pid)?)).await?;
    Ok(Json(url))
}

pub async fn list_repositories(State(hub): HubState) -> Json<Vec<RepositoryDescriptor>> {
    Json(hub.registry.list())
}

pub async fn get_repository(State(hub): HubState, Path(id): Path<String>) -> ApiResult<Json<RepositoryDescriptor>> {
    Ok(Json(hub.registry.get(&id)?))
}

fn hub_admin(hub: &crate::hub::Hub, headers: &HeaderMap) -> ApiResult<()> {
    let caller = writer(hub, headers)?;
    require_role(hub, &caller.user_id, "/", Role::HubAdmin)
}

pub async fn register_repository(
    State(hub): HubState,
    headers: HeaderMap,
    Body(desc): Body<RepositoryDescriptor>,
) -> ApiResult<(StatusCode, Json<RepositoryDescriptor>)> {
    hub_admin(&hub, &headers)?;
    hub.registry.register(desc.clone())?;
    Ok((StatusCode::CREATED, Json(desc)))
}

pub async fn conformance(State(hub): HubState, Path(id): Path<String>) -> ApiResult<Json<ConformanceReport>> {
    let report = blocking(move || Ok(hub.gateway.probe_capabilities(&id)?)).await?;
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
pub struct AllowList {
    pub users: BTreeSet<String>,
}

pub async fn allow_list(
    State(hub): HubState,
    Path(id): Path<String>,
    headers: HeaderMap,
    Body(list): Body<AllowList>,
) -> ApiResult<Json<RepositoryDescriptor>> {
    hub_admin(&hub, &headers)?;
    hub.registry.set_allow_list(&id, list.users)?;
    Ok(Json(hub.registry.get(&id)?))
}

fn day_param(hub: &crate::hub::Hub, q: &HashMap<String, String>) -> ApiResult<NaiveDate> {
    match q.get("day") {
        Some(d) => d
            .parse()
            .map_err(|_| ApiError::bad_request("day must be YYYY-MM-DD")),
        None => Ok(hub.clock.now().date_naive()),
    }
}

pub async fn usage(
    State(hub): HubState,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<UsageDigest>> {
    let day = day_param(&hub, &q)?;
    Ok(Json(hub.gateway.usage_report(&id, day)?))
}

pub async fn deliver(
    State(hub): HubState,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<DeliveryReceipt>> {
    hub_admin(&hub, &headers)?;
    let day = day_param(&hub, &q)?;
    let receipt = blocking(move || Ok(hub.gateway.deliver_report(&id, day)?)).await?;
    Ok(Json(receipt))
}
