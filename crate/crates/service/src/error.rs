use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    TooLarge(String),

    #[error("{0}")]
    Unprocessable(String),

    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<tspsense::Error> for ServiceError {
    fn from(e: tspsense::Error) -> Self {
        use tspsense::Error as E;
        match e {
            E::Infeasible { .. } => ServiceError::Conflict(e.to_string()),
            E::SizeLimit { .. } => ServiceError::TooLarge(e.to_string()),
            E::Io(_) | E::Json(_) => ServiceError::Internal(e.to_string()),
            _ => ServiceError::Unprocessable(e.to_string()),
        }
    }
}

impl From<tspsense_probes::ProbeError> for ServiceError {
    fn from(e: tspsense_probes::ProbeError) -> Self {
        if e.is_validation() {
            ServiceError::Conflict(e.to_string())
        } else {
            ServiceError::Internal(e.to_string())
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string(), "status": status.as_u16() }))).into_response()
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
