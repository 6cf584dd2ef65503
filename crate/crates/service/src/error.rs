use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] ivos_core::Error),

    #[error("session {0} not found")]
    NotFound(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("session limit of {0} reached")]
    Full(usize),

    #[error("configuration: {0}")]
    Config(String),

    #[error("worker failed: {0}")]
    Worker(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::Core(e) => e.kind(),
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "invalid_argument",
            ServiceError::Full(_) => "session_limit",
            ServiceError::Config(_) => "config",
            ServiceError::Worker(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        use ivos_core::Error as E;
        match self {
            ServiceError::Core(e) => match e {
                E::InvalidArgument(_) | E::EmptyEvidence => StatusCode::BAD_REQUEST,
                E::Capacity { .. } | E::MemoryCap { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                E::Format(_) => StatusCode::UNPROCESSABLE_ENTITY,
                E::Conflict(_) => StatusCode::CONFLICT,
                E::Precondition(_) => StatusCode::PRECONDITION_FAILED,
                E::EmptyMemory | E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Full(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Config(_) | ServiceError::Worker(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind(), "message": self.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}
