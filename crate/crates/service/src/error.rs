use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("deck `{0}` not found")]
    DeckNotFound(String),

    #[error("deck `{0}` already exists")]
    DeckExists(String),

    #[error("ticket `{0}` not found")]
    TicketNotFound(String),

    #[error("ticket `{0}` was already used")]
    TicketReplayed(String),

    #[error("ticket `{0}` has expired")]
    TicketExpired(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("corrupt deck log: {0}")]
    CorruptLog(String),

    #[error(transparent)]
    Core(#[from] memorize_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type ServiceResult<T> = Result<T, ServiceError>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use memorize_core::Error as Core;
        match self {
            ServiceError::DeckNotFound(_) | ServiceError::TicketNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::DeckExists(_) | ServiceError::TicketReplayed(_) => StatusCode::CONFLICT,
            ServiceError::TicketExpired(_) => StatusCode::GONE,
            ServiceError::BadRequest(_)
            | ServiceError::Core(Core::Domain(_) | Core::InvalidParameter { .. }) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
