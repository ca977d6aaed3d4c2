use axum::extract::{RawQuery, State};
use axum::Json;
use meshhub_core::metadata::MetadataDocument;
use meshhub_core::search::{OverviewStats, SearchQuery};
use serde::Serialize;
use serde_json::{json, Value};

use super::{parse_usize, query_pairs, ApiError, ApiResult, HubState};

pub const DEFAULT_PAGE: usize = 20;

#[derive(Debug, Serialize)]
pub struct Hit {
    pub guid: String,
    pub title: Option<String>,
    pub state: Option<String>,
    pub repository: Option<String>,
}

fn title_of(doc: &MetadataDocument) -> Option<String> {
    ["slmd", "registry_source", "grant_source"]
        .iter()
        .find_map(|b| doc.block(b)?.get("title")?.as_str().map(str::to_string))
}

fn registration_field(doc: &MetadataDocument, field: &str) -> Option<String> {
    doc.block("registration")?.get(field)?.as_str().map(str::to_string)
}

/// Parses `text`, `facet.NAME=value` (repeatable), `limit` and `offset`.
pub fn parse_search_query(raw: Option<&str>) -> ApiResult<SearchQuery> {
    let mut q = SearchQuery { limit: Some(DEFAULT_PAGE), ..SearchQuery::default() };
    for (k, v) in query_pairs(raw) {
        if let Some(facet) = k.strip_prefix("facet.") {
            q.facets.entry(facet.to_string()).or_default().push(v);
            continue;
        }
        match k.as_str() {
            "text" => q.text = Some(v),
            "limit" => q.limit = Some(parse_usize("limit", &v)?),
            "offset" => q.offset = parse_usize("offset", &v)?,
            other => return Err(ApiError::bad_request(format!("unknown parameter {other:?}"))),
        }
    }
    Ok(q)
}

pub async fn search(State(hub): HubState, RawQuery(raw): RawQuery) -> ApiResult<Json<Value>> {
    let q = parse_search_query(raw.as_deref())?;
    let index = hub.search.index();
    let result = index.search(&q)?;
    let counts = index.facet_counts(&q)?;
    let hits: Vec<Hit> = result
        .guids
        .iter()
        .map(|guid| match hub.store.get_document(guid) {
            Ok(doc) => Hit {
                guid: guid.clone(),
                title: title_of(&doc),
                state: registration_field(&doc, "state"),
                repository: registration_field(&doc, "repository_id"),
            },
            Err(_) => Hit { guid: guid.clone(), title: None, state: None, repository: None },
        })
        .collect();
    Ok(Json(json!({
        "total": result.total,
        "offset": q.offset,
        "limit": q.limit,
        "guids": result.guids,
        "hits": hits,
        "facet_counts": counts,
        "index_generation": index.generation,
    })))
}

pub async fn facets(State(hub): HubState) -> ApiResult<Json<Value>> {
    let counts = hub.search.facet_counts(&SearchQuery::default())?;
    Ok(Json(json!({ "facets": hub.search.facets(), "counts": counts })))
}

pub async fn stats(State(hub): HubState) -> Json<OverviewStats> {
    Json(hub.stats())
}
