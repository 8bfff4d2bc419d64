use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// Errors returned to HTTP clients as `{error, message, field?}` JSON.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),

    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("revision {expected} is stale; current revision is {current}")]
    Conflict { expected: u64, current: u64 },

    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    current_revision: Option<u64>,
}

impl ApiError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        ApiError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<fluoro_core::Error> for ApiError {
    fn from(e: fluoro_core::Error) -> Self {
        use fluoro_core::Error as E;
        match e {
            E::InvalidParameter { field, message } => ApiError::Invalid { field, message },
            E::Unknown { kind, name } => ApiError::invalid(kind, format!("unknown {kind} `{name}`")),
            E::Io(_) | E::Json(_) | E::Image(_) => ApiError::Internal(e.to_string()),
            other => ApiError::invalid("request", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let (error, field, current_revision) = match &self {
            ApiError::NotFound(_) => ("not_found", None, None),
            ApiError::Invalid { field, .. } => ("invalid_parameter", Some(field.as_str()), None),
            ApiError::Conflict { current, .. } => ("stale_revision", None, Some(*current)),
            ApiError::BadRequest(_) => ("bad_request", None, None),
            ApiError::Internal(_) => ("internal", None, None),
        };
        let body = ErrorBody {
            error,
            message: self.to_string(),
            field,
            current_revision,
        };
        (status, Json(body)).into_response()
    }
}
