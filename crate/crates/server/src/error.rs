use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use homewatch_core::centre::query::BadCursor;
use homewatch_core::centre::CentreError;
use homewatch_core::token::TokenError;

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong X-Operator-Token")
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<CentreError> for ApiError {
    fn from(e: CentreError) -> Self {
        let status = match &e {
            CentreError::NotEligible(_) | CentreError::Report(_) => StatusCode::UNPROCESSABLE_ENTITY,
            CentreError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            CentreError::DuplicatePatient | CentreError::IllegalTransition(_) => StatusCode::CONFLICT,
            CentreError::NotFound(_) => StatusCode::NOT_FOUND,
            CentreError::Token(t) => match t {
                TokenError::Unknown => StatusCode::NOT_FOUND,
                TokenError::Expired => StatusCode::GONE,
                TokenError::Consumed | TokenError::PatientNotMonitoring => StatusCode::CONFLICT,
            },
            CentreError::Storage(_) | CentreError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, code: e.code(), message: e.to_string() }
    }
}

impl From<BadCursor> for ApiError {
    fn from(e: BadCursor) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_cursor", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        (self.status, Json(ErrorBody { code: self.code.into(), message: self.message })).into_response()
    }
}
