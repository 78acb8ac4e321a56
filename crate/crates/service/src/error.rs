use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

/// Request failures, each mapped to one HTTP status.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{message}")]
    Unprocessable { message: String, frame: Option<usize> },
    #[error("no model loaded")]
    NoModel,
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame: Option<usize>,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::NoModel | Self::Conflict(_) => StatusCode::CONFLICT,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            Self::BadRequest(_) => "bad_request",
            Self::Unprocessable { .. } => "invalid_input",
            Self::NoModel => "no_model",
            Self::Conflict(_) => "conflict",
            Self::NotFound(_) => "not_found",
            Self::Internal(_) => "internal",
        }
    }

    pub(crate) fn unprocessable(message: impl Into<String>) -> Self {
        Self::Unprocessable {
            message: message.into(),
            frame: None,
        }
    }
}

/// Sorts signal-side errors into parse failures (400) and invariant
/// violations (422).
impl From<silhouette_core::Error> for ServiceError {
    fn from(e: silhouette_core::Error) -> Self {
        use silhouette_core::Error as E;
        let frame = match &e {
            E::FrameOrder { frame, .. } | E::OutOfRange { frame, .. } => Some(*frame),
            _ => None,
        };
        match e {
            E::AudioRead { .. } | E::UnsupportedEncoding(_) | E::EmptyAudio | E::Malformed(_) => {
                Self::BadRequest(e.to_string())
            }
            E::Io(_) => Self::Internal(e.to_string()),
            _ => Self::Unprocessable {
                message: e.to_string(),
                frame,
            },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let frame = match &self {
            Self::Unprocessable { frame, .. } => *frame,
            _ => None,
        };
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
            frame,
        };
        (self.status(), Json(body)).into_response()
    }
}
