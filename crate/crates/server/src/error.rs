use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use churnlab_core::api::{ErrorBody, ErrorKind};
use churnlab_core::experiment::config::ConfigError;
use churnlab_core::experiment::pipeline::{PipelineError, Stage};
use churnlab_core::metrics::MetricsError;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{}", .0.error)]
pub struct ApiError(pub ErrorBody);

impl ApiError {
    pub fn bad_request(msg: impl Into<String>) -> Self {
        Self(ErrorBody { kind: ErrorKind::BadRequest, error: msg.into(), stage: None, field_errors: vec![], warnings: vec![] })
    }

    pub fn not_found(msg: impl Into<String>) -> Self {
        Self(ErrorBody { kind: ErrorKind::NotFound, error: msg.into(), stage: None, field_errors: vec![], warnings: vec![] })
    }

    pub fn failed(stage: Option<Stage>, msg: impl Into<String>) -> Self {
        Self(ErrorBody { kind: ErrorKind::Failed, error: msg.into(), stage, field_errors: vec![], warnings: vec![] })
    }

    pub fn status(&self) -> StatusCode {
        match self.0.kind {
            ErrorKind::InvalidConfig | ErrorKind::Failed => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
        }
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        let error = e.to_string();
        match e {
            ConfigError::Invalid { errors, warnings } => Self(ErrorBody {
                kind: ErrorKind::InvalidConfig,
                error,
                stage: Some(Stage::Config),
                field_errors: errors,
                warnings,
            }),
            _ => Self::bad_request(error),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        Self::failed(Some(e.stage), e.to_string())
    }
}

impl From<MetricsError> for ApiError {
    fn from(e: MetricsError) -> Self {
        Self::bad_request(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.0)).into_response()
    }
}
