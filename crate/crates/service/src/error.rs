use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use inspekt_core::capture::CaptureError;
use inspekt_core::detector::DetectorError;
use inspekt_core::segmenter::SegmenterError;
use inspekt_core::session::SessionError;
use serde::Serialize;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "Validation", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        (self.status, Json(Body { error: self.code, message: &self.message })).into_response()
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e.to_string())
    }
}

impl From<CaptureError> for ApiError {
    fn from(e: CaptureError) -> Self {
        let code = match e {
            CaptureError::Corrupt { .. } => "CorruptStore",
            _ => "CaptureFailure",
        };
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, code, e.to_string())
    }
}

/// Phase errors are 409, unknown ids 404, undecodable images 400, storage
/// and backend faults 500, everything else 422.
impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError as E;
        let e = match e {
            E::Capture(c) => return c.into(),
            other => other,
        };
        let (status, code) = match &e {
            E::InvalidPhase { .. } => (StatusCode::CONFLICT, "InvalidPhase"),
            E::UnassessedDetections(_) => (StatusCode::CONFLICT, "UnassessedDetections"),
            E::UnknownDetection(_) => (StatusCode::NOT_FOUND, "UnknownDetection"),
            E::BadImage(_) => (StatusCode::BAD_REQUEST, "BadImage"),
            E::Detector(DetectorError::BackendFailure(_)) | E::Segmenter(SegmenterError::BackendFailure(_)) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "BackendFailure")
            }
            E::BadCalibration(_) => (StatusCode::UNPROCESSABLE_ENTITY, "BadCalibration"),
            E::OutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "OutOfRange"),
            E::NotVisible(_) => (StatusCode::UNPROCESSABLE_ENTITY, "NotVisible"),
            E::NotConfirmed(_) => (StatusCode::UNPROCESSABLE_ENTITY, "NotConfirmed"),
            E::NoMask(_) => (StatusCode::UNPROCESSABLE_ENTITY, "NoMask"),
            E::EmptyMask(_) => (StatusCode::UNPROCESSABLE_ENTITY, "EmptyMask"),
            E::NonPositiveDepth => (StatusCode::UNPROCESSABLE_ENTITY, "NonPositiveDepth"),
            E::Segmenter(SegmenterError::Mask(inspekt_core::mask::MaskError::OutsideBox)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "OutsideBox")
            }
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "Validation"),
        };
        ApiError::new(status, code, e.to_string())
    }
}
