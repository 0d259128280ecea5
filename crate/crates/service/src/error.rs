use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use easyrl_core::agents::HyperparameterError;
use easyrl_core::engine::EngineError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Error body returned by every failing route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

/// HTTP status for each engine error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "not_found" => StatusCode::NOT_FOUND,
        "incompatible" => StatusCode::UNPROCESSABLE_ENTITY,
        "state_error" => StatusCode::CONFLICT,
        "bad_request" => StatusCode::BAD_REQUEST,
        "plugin_error" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            http_status: status_for(code).as_u16(),
            code: code.to_string(),
            message: message.into(),
            details: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new("internal", message)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<HyperparameterError> for ApiError {
    fn from(e: HyperparameterError) -> Self {
        let err = ApiError::bad_request(e.to_string());
        match e {
            HyperparameterError::UnknownKey { key, valid } => {
                err.with_details(json!({ "key": key, "validKeys": valid }))
            }
            HyperparameterError::BadValue { key, .. } => err.with_details(json!({ "key": key })),
            HyperparameterError::Invalid(_) => err,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
