use std::collections::HashMap;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::Json;
use meshhub_core::adapters::{HarvestRun, SourceDescriptor};
use meshhub_core::auth::Role;
use meshhub_core::registration::{RegistrationError, StudyRecord, StudyState};
use meshhub_core::vlmd::{validate_document, DataDictionary};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{blocking, require_role, writer, ApiError, ApiResult, Body, HubState};
use crate::hub::Hub;

fn hub_admin(hub: &Hub, headers: &HeaderMap) -> ApiResult<String> {
    let caller = writer(hub, headers)?;
    require_role(hub, &caller.user_id, "/", Role::HubAdmin)?;
    Ok(caller.user_id)
}

pub async fn register_source(
    State(hub): HubState,
    headers: HeaderMap,
    Body(desc): Body<SourceDescriptor>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    hub_admin(&hub, &headers)?;
    let id = hub.adapters.register_source(desc)?;
    Ok((StatusCode::CREATED, Json(json!({ "source_id": id }))))
}

pub async fn list_sources(State(hub): HubState) -> Json<Vec<SourceDescriptor>> {
    Json(hub.adapters.sources())
}

pub async fn run_source(
    State(hub): HubState,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<HarvestRun>> {
    hub_admin(&hub, &headers)?;
    let run = blocking(move || Ok(hub.adapters.harvest_once(&id)?)).await?;
    Ok(Json(run))
}

pub async fn runs(State(hub): HubState, Query(q): Query<HashMap<String, String>>) -> Json<Vec<HarvestRun>> {
    Json(hub.adapters.runs(q.get("source").map(String::as_str)))
}

pub async fn list_studies(
    State(hub): HubState,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<StudyRecord>>> {
    let state = match q.get("state") {
        Some(s) => Some(s.parse::<StudyState>().map_err(ApiError::bad_request)?),
        None => None,
    };
    Ok(Json(hub.registration.list(state)))
}

#[derive(Debug, Deserialize)]
pub struct Award {
    pub award_number: String,
    #[serde(default)]
    pub grant: Value,
}

#[derive(Debug, Deserialize)]
pub struct SeedRequest {
    pub awards: Vec<Award>,
}

pub async fn seed_studies(
    State(hub): HubState,
    headers: HeaderMap,
    Body(req): Body<SeedRequest>,
) -> ApiResult<(StatusCode, Json<Vec<StudyRecord>>)> {
    hub_admin(&hub, &headers)?;
    let awards = req
        .awards
        .into_iter()
        .map(|a| {
            let grant = if a.grant.is_null() { json!({}) } else { a.grant };
            (a.award_number, grant)
        })
        .collect();
    Ok((StatusCode::CREATED, Json(hub.registration.seed_from_awards(awards)?)))
}

pub async fn get_study(State(hub): HubState, Path(guid): Path<String>) -> ApiResult<Json<StudyRecord>> {
    Ok(Json(hub.registration.get(&guid)?))
}

#[derive(Debug, Deserialize)]
struct ClaimBody {
    claim_token: String,
}

#[derive(Debug, Deserialize)]
struct NctBody {
    nct_id: String,
}

#[derive(Debug, Deserialize)]
struct DelegateBody {
    user_id: String,
    role: Role,
}

#[derive(Debug, Deserialize)]
struct RepositoryBody {
    repository_id: String,
}

fn body<T: serde::de::DeserializeOwned>(v: Value) -> ApiResult<T> {
    serde_json::from_value(v).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// `POST /studies/{guid}/{action}` for claim-token, claim, nct, slmd,
/// delegate, vlmd and repository.
pub async fn study_action(
    State(hub): HubState,
    Path(rest): Path<String>,
    headers: HeaderMap,
    raw: axum::body::Bytes,
) -> ApiResult<Json<Value>> {
    let (guid, action) = rest
        .rsplit_once('/')
        .ok_or_else(|| ApiError::not_found("expected /studies/{guid}/{action}"))?;
    let (guid, action) = (guid.to_string(), action.to_string());
    let user = writer(&hub, &headers)?.user_id;
    let payload: Value = if raw.iter().all(u8::is_ascii_whitespace) {
        Value::Null
    } else {
        serde_json::from_slice(&raw).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?
    };
    let reg = hub.registration.clone();
    blocking(move || {
        let out = match action.as_str() {
            "claim-token" => json!({ "guid": guid, "claim_token": reg.issue_claim_token(&user, &guid)? }),
            "claim" => {
                let b: ClaimBody = body(payload)?;
                json!(reg.claim_study(&user, &guid, &b.claim_token)?)
            }
            "nct" => {
                let b: NctBody = body(payload)?;
                json!(reg.link_nct(&user, &guid, &b.nct_id)?)
            }
            "slmd" => json!(reg.submit_slmd(&user, &guid, payload)?),
            "delegate" => {
                let b: DelegateBody = body(payload)?;
                reg.delegate(&user, &guid, &b.user_id, b.role)?;
                json!({ "guid": guid, "user_id": b.user_id, "role": b.role })
            }
            "vlmd" => {
                let dict: DataDictionary = match serde_json::from_value(payload.clone()) {
                    Ok(d) => d,
                    Err(e) => {
                        let mut v: Vec<String> = validate_document(&payload).iter().map(ToString::to_string).collect();
                        if v.is_empty() {
                            v.push(e.to_string());
                        }
                        return Err(RegistrationError::SchemaViolation(v).into());
                    }
                };
                json!(reg.attach_vlmd(&user, &guid, &dict)?)
            }
            "repository" => {
                let b: RepositoryBody = body(payload)?;
                if !hub.registry.contains(&b.repository_id) {
                    return Err(ApiError::not_found(format!("unknown repository {}", b.repository_id)));
                }
                json!(reg.set_repository(&user, &guid, &b.repository_id)?)
            }
            other => return Err(ApiError::not_found(format!("unknown study action {other:?}"))),
        };
        Ok(out)
    })
    .await
    .map(Json)
}
