use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cck_core::{FitError, ValidationError};
use cck_io::{FormatError, PipelineError};
use serde_json::{json, Value};

use crate::platform::PlatformError;

/// Error response body: `{"code", "message", "detail"}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    /// Logs the cause and hands the client an id to quote.
    pub fn internal(cause: impl std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        tracing::error!(error_id = %id, "{cause}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", "internal error")
            .with_detail(json!({ "error_id": id }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

fn format_detail(e: &FormatError) -> Value {
    match e {
        FormatError::MissingColumn(column) => json!({ "column": column }),
        FormatError::MalformedRow { line, .. } | FormatError::EncodingError { line } => {
            json!({ "line": line })
        }
        FormatError::DuplicateId { kind, id, line } => json!({ "kind": kind, "id": id, "line": line }),
        FormatError::InvalidConfig(_) | FormatError::InvalidDocument { .. } => Value::Null,
    }
}

fn validation_detail(e: &ValidationError) -> Value {
    match e {
        ValidationError::UnknownTask {
            task_id,
            annotation_id,
            line,
        } => json!({ "annotation_id": annotation_id, "line": line, "task_id": task_id }),
        ValidationError::UnknownReportedLabel {
            label,
            question_id,
            annotation_id,
            line,
        } => json!({
            "annotation_id": annotation_id,
            "line": line,
            "question_id": question_id,
            "label": label,
        }),
        ValidationError::UnknownQuestion { question_id, .. } => json!({ "question_id": question_id }),
        ValidationError::DuplicateId { kind, id } => json!({ "kind": kind, "id": id }),
        ValidationError::InvalidLabelSpace { question_id, .. }
        | ValidationError::InvalidDependency { question_id, .. } => {
            json!({ "question_id": question_id })
        }
        ValidationError::InvalidView(_) => Value::Null,
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        let detail = format_detail(&e);
        Self::new(StatusCode::BAD_REQUEST, "MalformedInput", e.to_string()).with_detail(detail)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Format(f) => f.into(),
            PipelineError::Validation(v) => {
                let detail = validation_detail(&v);
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", v.to_string())
                    .with_detail(detail)
            }
            PipelineError::NoAnnotations => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "NoAnnotations",
                "no annotations in input",
            ),
            PipelineError::Fit { question, source } => {
                let code = match source {
                    FitError::NoAnnotations(_) => "NoAnnotations",
                    _ => "FitFailed",
                };
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, source.to_string())
                    .with_detail(json!({ "question_id": question }))
            }
        }
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        match &e {
            PlatformError::Unreachable(_) => {
                Self::new(StatusCode::BAD_GATEWAY, "PlatformUnreachable", e.to_string())
            }
            PlatformError::InvalidPage { resource, page, .. } => {
                Self::new(StatusCode::BAD_GATEWAY, "PlatformInvalidPayload", e.to_string())
                    .with_detail(json!({ "resource": resource, "page": page }))
            }
            PlatformError::Conversion(problems) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ConversionFailed", e.to_string())
                    .with_detail(json!({ "records": problems }))
            }
        }
    }
}
