use std::collections::BTreeMap;

use axum::extract::{Path, RawQuery, State};
use axum::http::{HeaderMap, StatusCode};
use axum::Json;
use meshhub_core::auth::{study_path, Role};
use meshhub_core::ids::is_valid_guid;
use meshhub_core::metadata::{MetadataDocument, MetadataError, MetadataQuery, PathFilter};
use meshhub_core::pid::{AccessMethod, DataObjectRecord};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{blocking, bearer, parse_usize, query_pairs, require_role, writer, ApiError, ApiResult, Body, HubState};

fn editor_of(hub: &crate::hub::Hub, headers: &HeaderMap, guid: &str) -> ApiResult<String> {
    if !is_valid_guid(guid) {
        return Err(MetadataError::InvalidGuid(guid.to_string()).into());
    }
    let token = writer(hub, headers)?;
    require_role(hub, &token.user_id, &study_path(guid), Role::MetadataEditor)?;
    Ok(token.user_id)
}

pub async fn create_metadata(
    State(hub): HubState,
    Path(guid): Path<String>,
    headers: HeaderMap,
    Body(payload): Body<Value>,
) -> ApiResult<(StatusCode, Json<MetadataDocument>)> {
    editor_of(&hub, &headers, &guid)?;
    let doc = hub.store.create_document(&guid, payload)?;
    Ok((StatusCode::CREATED, Json(doc)))
}

pub async fn update_block(
    State(hub): HubState,
    Path(rest): Path<String>,
    headers: HeaderMap,
    Body(subtree): Body<Value>,
) -> ApiResult<Json<MetadataDocument>> {
    let (guid, block) = rest
        .rsplit_once('/')
        .ok_or_else(|| ApiError::bad_request("expected /metadata/{guid}/{block}"))?;
    editor_of(&hub, &headers, guid)?;
    Ok(Json(hub.store.update_document(guid, block, subtree)?))
}

pub async fn get_metadata(State(hub): HubState, Path(guid): Path<String>) -> ApiResult<Json<MetadataDocument>> {
    Ok(Json(hub.store.get_document(&guid)?))
}

/// `?path=FILTER` (repeatable), `text`, `limit`, `offset`.
pub async fn query_metadata(State(hub): HubState, RawQuery(raw): RawQuery) -> ApiResult<Json<Value>> {
    let mut q = MetadataQuery::default();
    for (k, v) in query_pairs(raw.as_deref()) {
        match k.as_str() {
            "path" => q.path_filters.push(
                v.parse::<PathFilter>()
                    .map_err(|e| ApiError::from(MetadataError::InvalidQuery(e)))?,
            ),
            "text" => q.free_text = Some(v),
            "limit" => q.limit = Some(parse_usize("limit", &v)?),
            "offset" => q.offset = parse_usize("offset", &v)?,
            other => return Err(ApiError::bad_request(format!("unknown parameter {other:?}"))),
        }
    }
    let docs = hub.store.query_documents(&q)?;
    Ok(Json(json!({ "count": docs.len(), "documents": docs })))
}

#[derive(Debug, Deserialize)]
pub struct MintRequest {
    pub repository_id: String,
    pub size_bytes: u64,
    pub checksums: BTreeMap<String, String>,
    pub access_methods: Vec<AccessMethod>,
}

pub async fn mint(
    State(hub): HubState,
    headers: HeaderMap,
    Body(req): Body<MintRequest>,
) -> ApiResult<(StatusCode, Json<DataObjectRecord>)> {
    let token = writer(&hub, &headers)?;
    require_role(&hub, &token.user_id, "/", Role::HubAdmin)?;
    let rec = hub
        .pids
        .mint_pid(&req.repository_id, req.size_bytes, req.checksums, req.access_methods)?;
    Ok((StatusCode::CREATED, Json(rec)))
}

/// Public resolution; an authenticated caller's resolution is recorded.
pub async fn resolve(
    State(hub): HubState,
    Path(pid): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<DataObjectRecord>> {
    let rec = match bearer(&headers) {
        Some(token) => blocking(move || Ok(hub.gateway.resolve_for(&token, &pid)?)).await?,
        None => hub.pids.resolve_pid(&pid)?,
    };
    Ok(Json(rec))
}

pub async fn list_index(State(hub): HubState, RawQuery(raw): RawQuery) -> ApiResult<Json<Vec<DataObjectRecord>>> {
    let pairs = query_pairs(raw.as_deref());
    let repo = pairs.iter().find(|(k, _)| k == "repository").map(|(_, v)| v.as_str());
    Ok(Json(match repo {
        Some(r) => hub.pids.list_by_repository(r)?,
        None => hub.pids.all(),
    }))
}
