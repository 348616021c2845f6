use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("no session {0:?}")]
    NoSession(String),
    #[error("no recording {0:?}")]
    NoRecording(String),
    #[error("no segment {0} in the working track")]
    UnknownSegment(usize),
    #[error("edit rejected: {0}")]
    InvalidEdit(String),
    #[error("stale revision {given}; session is at {current}")]
    StaleRevision { current: u64, given: u64 },
    #[error("session already finished")]
    AlreadyFinished,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] bsannot_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type ReviewResult<T> = std::result::Result<T, ReviewError>;

impl ReviewError {
    pub fn kind(&self) -> &'static str {
        match self {
            ReviewError::NoSession(_) => "no_session",
            ReviewError::NoRecording(_) => "no_recording",
            ReviewError::UnknownSegment(_) => "unknown_segment",
            ReviewError::InvalidEdit(_) => "invalid_edit",
            ReviewError::StaleRevision { .. } => "stale_revision",
            ReviewError::AlreadyFinished => "already_finished",
            ReviewError::BadRequest(_) => "bad_request",
            ReviewError::Core(e) => e.kind(),
            ReviewError::Io(_) => "io",
            ReviewError::Json(_) => "json",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ReviewError::NoSession(_) | ReviewError::NoRecording(_) => StatusCode::NOT_FOUND,
            ReviewError::StaleRevision { .. } | ReviewError::AlreadyFinished => StatusCode::CONFLICT,
            ReviewError::UnknownSegment(_) | ReviewError::InvalidEdit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ReviewError::Core(_) | ReviewError::Io(_) | ReviewError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let mut body = json!({
            "v": crate::API_VERSION,
            "error": { "kind": self.kind(), "message": self.to_string() },
        });
        if let ReviewError::StaleRevision { current, .. } = self {
            body["error"]["current_revision"] = json!(current);
        }
        (self.status(), Json(body)).into_response()
    }
}
