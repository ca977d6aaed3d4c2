use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use meshhub_core::adapters::AdapterError;
use meshhub_core::auth::AuthError;
use meshhub_core::gateway::GatewayError;
use meshhub_core::journal::JournalError;
use meshhub_core::metadata::MetadataError;
use meshhub_core::pid::PidError;
use meshhub_core::registration::RegistrationError;
use meshhub_core::search::SearchError;
use serde_json::{json, Value};

/// Error body: `{"error": code, "message": text, "detail"?: ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Option<Value>,
}

pub type ApiResult<T> = Result<T, ApiError>;

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), detail: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(d) = self.detail {
            body["detail"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

fn of(status: StatusCode, code: &'static str, e: &impl ToString) -> ApiError {
    ApiError::new(status, code, e.to_string())
}

impl From<JournalError> for ApiError {
    fn from(e: JournalError) -> Self {
        log::error!("{e}");
        of(StatusCode::INTERNAL_SERVER_ERROR, "storage", &e)
    }
}

impl From<MetadataError> for ApiError {
    fn from(e: MetadataError) -> Self {
        use MetadataError::*;
        match e {
            DuplicateGuid(_) => of(StatusCode::CONFLICT, "duplicate_guid", &e),
            UnknownGuid(_) => of(StatusCode::NOT_FOUND, "unknown_guid", &e),
            InvalidGuid(_) => of(StatusCode::BAD_REQUEST, "invalid_guid", &e),
            MalformedPayload(_) => of(StatusCode::BAD_REQUEST, "malformed_payload", &e),
            InvalidQuery(_) => of(StatusCode::BAD_REQUEST, "invalid_query", &e),
            Journal(j) => j.into(),
        }
    }
}

impl From<PidError> for ApiError {
    fn from(e: PidError) -> Self {
        use PidError::*;
        match e {
            UnknownRepository(_) => of(StatusCode::NOT_FOUND, "unknown_repository", &e),
            InvalidChecksum(_) => of(StatusCode::BAD_REQUEST, "invalid_checksum", &e),
            NoAccessMethod => of(StatusCode::BAD_REQUEST, "no_access_method", &e),
            InvalidAccessMethod(_) => of(StatusCode::BAD_REQUEST, "invalid_access_method", &e),
            UnknownPid(_) => of(StatusCode::NOT_FOUND, "unknown_pid", &e),
            MalformedPid(_) => of(StatusCode::BAD_REQUEST, "malformed_pid", &e),
            InvalidPrefix(_) => of(StatusCode::INTERNAL_SERVER_ERROR, "invalid_prefix", &e),
            Journal(j) => j.into(),
        }
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        use AuthError::*;
        match e {
            UnknownUser(_) => of(StatusCode::NOT_FOUND, "unknown_user", &e),
            DuplicateUser(_) => of(StatusCode::CONFLICT, "duplicate_user", &e),
            ScopeNotGrantable(_) => of(StatusCode::FORBIDDEN, "scope_not_grantable", &e),
            TokenInvalid(_) => of(StatusCode::UNAUTHORIZED, "token_invalid", &e),
            Expired => of(StatusCode::UNAUTHORIZED, "token_expired", &e),
            MalformedPath(_) => of(StatusCode::BAD_REQUEST, "malformed_path", &e),
            UnknownRole(_) => of(StatusCode::BAD_REQUEST, "unknown_role", &e),
            InvalidLifetime(_) => of(StatusCode::BAD_REQUEST, "invalid_lifetime", &e),
            Journal(j) => j.into(),
        }
    }
}

impl From<AdapterError> for ApiError {
    fn from(e: AdapterError) -> Self {
        use AdapterError::*;
        match e {
            DuplicateSource(_) => of(StatusCode::CONFLICT, "duplicate_source", &e),
            UnknownSource(_) => of(StatusCode::NOT_FOUND, "unknown_source", &e),
            Disabled(_) => of(StatusCode::CONFLICT, "source_disabled", &e),
            InvalidMapping(_) => of(StatusCode::BAD_REQUEST, "invalid_mapping", &e),
            InvalidSource(_) => of(StatusCode::BAD_REQUEST, "invalid_source", &e),
            Journal(j) => j.into(),
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        use GatewayError::*;
        match e {
            UnknownRepository(_) => of(StatusCode::NOT_FOUND, "unknown_repository", &e),
            DuplicateRepository(_) => of(StatusCode::CONFLICT, "duplicate_repository", &e),
            InvalidDescriptor(_) => of(StatusCode::BAD_REQUEST, "invalid_descriptor", &e),
            UnknownPid(_) => of(StatusCode::NOT_FOUND, "unknown_pid", &e),
            TokenInvalid(_) => of(StatusCode::UNAUTHORIZED, "token_invalid", &e),
            Denied(_) => of(StatusCode::FORBIDDEN, "denied", &e),
            RepositoryUnavailable(_) => of(StatusCode::BAD_GATEWAY, "repository_unavailable", &e),
            ReportDelivery { .. } => of(StatusCode::BAD_GATEWAY, "report_delivery", &e),
            Journal(j) => j.into(),
        }
    }
}

impl From<RegistrationError> for ApiError {
    fn from(e: RegistrationError) -> Self {
        use RegistrationError::*;
        match e {
            DuplicateAward(_) => of(StatusCode::CONFLICT, "duplicate_award", &e),
            InvalidAward(_) => of(StatusCode::BAD_REQUEST, "invalid_award", &e),
            UnknownStudy(_) => of(StatusCode::NOT_FOUND, "unknown_study", &e),
            AlreadyClaimed(_) => of(StatusCode::CONFLICT, "already_claimed", &e),
            BadClaimToken => of(StatusCode::FORBIDDEN, "bad_claim_token", &e),
            NotAuthorized { .. } => of(StatusCode::FORBIDDEN, "not_authorized", &e),
            MalformedNct(_) => of(StatusCode::BAD_REQUEST, "malformed_nct", &e),
            RegistryMiss { ref run, .. } => {
                let detail = serde_json::to_value(run.as_ref()).unwrap_or(Value::Null);
                of(StatusCode::NOT_FOUND, "registry_miss", &e).with_detail(detail)
            }
            SchemaViolation(ref v) => {
                let detail = json!(v);
                of(StatusCode::UNPROCESSABLE_ENTITY, "schema_violation", &e).with_detail(detail)
            }
            WrongState { .. } => of(StatusCode::CONFLICT, "wrong_state", &e),
            UnknownUser(_) => of(StatusCode::NOT_FOUND, "unknown_user", &e),
            InvalidRole(_) => of(StatusCode::BAD_REQUEST, "invalid_role", &e),
            NoRegistrySource => of(StatusCode::SERVICE_UNAVAILABLE, "no_registry_source", &e),
            Metadata(m) => m.into(),
            Auth(a) => a.into(),
            Adapter(a) => a.into(),
            Journal(j) => j.into(),
        }
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::UnknownFacet(_) => of(StatusCode::BAD_REQUEST, "unknown_facet", &e),
            SearchError::InvalidConfig(_) => of(StatusCode::INTERNAL_SERVER_ERROR, "invalid_config", &e),
        }
    }
}
