//! Mapping of engine errors onto HTTP responses.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use erl_core::catalog::CatalogError;
use erl_core::scoring::ScoringError;
use erl_core::store::StoreError;
use erl_core::traversal::TraversalError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Error body. `code` names the engine error variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { http_status: status.as_u16(), code: code.to_string(), message: message.into(), detail: Value::Null }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn invalid_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }

    pub fn unknown_catalog(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "UnknownCatalog", format!("catalog `{id}` is not loaded"))
            .with_detail(json!({ "catalog_id": id }))
    }

    pub fn stale_seq(expected: u64, current: u64) -> Self {
        ApiError::new(
            StatusCode::CONFLICT,
            "StaleSeq",
            format!("expected_seq {expected} is stale; the session is at seq {current}"),
        )
        .with_detail(json!({ "expected_seq": expected, "current_seq": current }))
    }

    pub fn unauthorized() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<TraversalError> for ApiError {
    fn from(e: TraversalError) -> Self {
        use TraversalError::*;
        let message = e.to_string();
        let (status, code, detail) = match &e {
            EmptySelection => (StatusCode::UNPROCESSABLE_ENTITY, "EmptySelection", Value::Null),
            UnknownBlock(b) => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownBlock", json!({ "block_id": b })),
            DuplicateBlock(b) => (StatusCode::UNPROCESSABLE_ENTITY, "DuplicateBlock", json!({ "block_id": b })),
            MissingUseCase => (StatusCode::UNPROCESSABLE_ENTITY, "MissingUseCase", Value::Null),
            CatalogMismatch { expected, found } => (
                StatusCode::CONFLICT,
                "CatalogMismatch",
                json!({ "expected": expected.to_string(), "found": found.to_string() }),
            ),
            OutOfOrderAnswer { expected, got } => {
                (StatusCode::CONFLICT, "OutOfOrderAnswer", json!({ "expected": expected, "got": got }))
            }
            SessionComplete => (StatusCode::CONFLICT, "SessionComplete", Value::Null),
            UnknownIndicator(k) => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownIndicator", json!(k)),
            NeverAnswered(k) => (StatusCode::CONFLICT, "NeverAnswered", json!(k)),
            UnsureYes => (StatusCode::UNPROCESSABLE_ENTITY, "UnsureYes", Value::Null),
            CommentTooLong => (StatusCode::UNPROCESSABLE_ENTITY, "CommentTooLong", Value::Null),
            Replay { seq, .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Replay", json!({ "seq": seq })),
        };
        ApiError::new(status, code, message).with_detail(detail)
    }
}

impl From<ScoringError> for ApiError {
    fn from(e: ScoringError) -> Self {
        let message = e.to_string();
        match &e {
            ScoringError::CatalogMismatch { expected, found } => {
                ApiError::new(StatusCode::CONFLICT, "CatalogMismatch", message)
                    .with_detail(json!({ "expected": expected.to_string(), "found": found.to_string() }))
            }
            ScoringError::UnknownIndicator(k) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "UnknownIndicator", message).with_detail(json!(k))
            }
            ScoringError::InvalidConfig(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidConfig", message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use StoreError::*;
        let message = e.to_string();
        let (status, code, detail) = match e {
            Traversal(inner) => return inner.into(),
            Scoring(inner) => return inner.into(),
            UnknownCatalog(r) => (StatusCode::NOT_FOUND, "UnknownCatalog", json!({ "catalog_ref": r.to_string() })),
            CatalogMismatch { expected, found } => (
                StatusCode::CONFLICT,
                "CatalogMismatch",
                json!({ "expected": expected.to_string(), "found": found.to_string() }),
            ),
            SelectionMismatch { expected, found } => {
                (StatusCode::CONFLICT, "SelectionMismatch", json!({ "expected": expected, "found": found }))
            }
            ConfigMismatch => (StatusCode::CONFLICT, "ConfigMismatch", Value::Null),
            UseCaseMismatch(a, b) => (StatusCode::UNPROCESSABLE_ENTITY, "UseCaseMismatch", json!([a, b])),
            UnknownUseCase(id) => (StatusCode::NOT_FOUND, "UnknownUseCase", json!({ "use_case_id": id })),
            UnknownSession(id) => (StatusCode::NOT_FOUND, "UnknownSession", json!({ "session_id": id })),
            SessionIncomplete => (StatusCode::CONFLICT, "SessionIncomplete", Value::Null),
            ReportMismatch => (StatusCode::INTERNAL_SERVER_ERROR, "ReportMismatch", Value::Null),
            AppendOnlyViolation(id) => (StatusCode::CONFLICT, "AppendOnlyViolation", json!({ "session_id": id })),
            InvalidId(id) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidId", json!({ "id": id })),
            Locked(_) => (StatusCode::SERVICE_UNAVAILABLE, "Locked", Value::Null),
            Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Corrupt", Value::Null),
            Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Io", Value::Null),
        };
        ApiError::new(status, code, message).with_detail(detail)
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "Catalog", e.to_string())
    }
}
