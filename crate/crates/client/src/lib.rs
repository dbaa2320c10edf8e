//! Thin async client for the churnlab HTTP service.

use std::time::Duration;

use churnlab_core::api::{paths, *};
use churnlab_core::experiment::config::ValidatedConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Http { url: String, source: reqwest::Error },
    #[error("{} ({status})", .body.error)]
    Api { status: u16, body: ErrorBody },
    #[error("unexpected response from {url} ({status}): {message}")]
    Decode { url: String, status: u16, message: String },
}

impl ClientError {
    /// Error body returned by the service, if any.
    pub fn body(&self) -> Option<&ErrorBody> {
        match self {
            ClientError::Api { body, .. } => Some(body),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_owned();
        Self { http: reqwest::Client::new(), base }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(url: String, resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|source| ClientError::Http { url: url.clone(), source })?;
        if !status.is_success() {
            return match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) => Err(ClientError::Api { status: status.as_u16(), body }),
                Err(_) => Err(ClientError::Decode {
                    url,
                    status: status.as_u16(),
                    message: String::from_utf8_lossy(&bytes).into_owned(),
                }),
            };
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode { url, status: status.as_u16(), message: e.to_string() })
    }

    async fn post<Req: Serialize + ?Sized, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self.http.post(&url).json(req).send().await.map_err(|source| ClientError::Http { url: url.clone(), source })?;
        Self::decode(url, resp).await
    }

    async fn get<Resp: DeserializeOwned>(&self, path: &str) -> Result<Resp, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self.http.get(&url).send().await.map_err(|source| ClientError::Http { url: url.clone(), source })?;
        Self::decode(url, resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get(paths::HEALTH).await
    }

    pub async fn validate(&self, config: &Value) -> Result<ValidatedConfig, ClientError> {
        self.post(paths::VALIDATE, &ConfigRequest { config: config.clone(), threads: 0 }).await
    }

    pub async fn plan(&self, config: &Value) -> Result<PlanResponse, ClientError> {
        self.post(paths::PLAN, &ConfigRequest { config: config.clone(), threads: 0 }).await
    }

    pub async fn ingest(&self, config: &Value) -> Result<IngestResponse, ClientError> {
        self.post(paths::INGEST, &ConfigRequest { config: config.clone(), threads: 0 }).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<TrainResponse, ClientError> {
        self.post(paths::TRAIN, req).await
    }

    pub async fn rashomon(&self, req: &RashomonRequest) -> Result<RashomonResponse, ClientError> {
        self.post(paths::RASHOMON, req).await
    }

    pub async fn churn(&self, req: &ChurnRequest) -> Result<ChurnResponse, ClientError> {
        self.post(paths::CHURN, req).await
    }

    pub async fn multiplicity(&self, req: &MultiplicityRequest) -> Result<MultiplicityResponse, ClientError> {
        self.post(paths::MULTIPLICITY, req).await
    }

    pub async fn common_arbitrariness(&self, req: &ArbitrarinessRequest) -> Result<ArbitrarinessResponse, ClientError> {
        self.post(paths::ARBITRARINESS, req).await
    }

    pub async fn plots(&self, req: &PlotRequest) -> Result<PlotResponse, ClientError> {
        self.post(paths::PLOTS, req).await
    }

    pub async fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeResponse, ClientError> {
        self.post(paths::ANALYZE, req).await
    }

    pub async fn bounds_check(&self, config: &Value, threads: usize) -> Result<BoundsCheckResponse, ClientError> {
        self.post(paths::BOUNDS_CHECK, &ConfigRequest { config: config.clone(), threads }).await
    }

    pub async fn submit(&self, req: &ExperimentRequest) -> Result<ExperimentAccepted, ClientError> {
        self.post(paths::EXPERIMENTS, req).await
    }

    pub async fn status(&self, id: &str) -> Result<ExperimentStatus, ClientError> {
        self.get(&format!("{}/{id}", paths::EXPERIMENTS)).await
    }

    /// Submit and poll until the job finishes; `progress` sees every poll.
    pub async fn run(
        &self,
        req: &ExperimentRequest,
        poll: Duration,
        mut progress: impl FnMut(&ExperimentStatus),
    ) -> Result<ExperimentStatus, ClientError> {
        let accepted = self.submit(req).await?;
        loop {
            let s = self.status(&accepted.id).await?;
            progress(&s);
            if s.state.is_terminal() {
                return Ok(s);
            }
            tokio::time::sleep(poll).await;
        }
    }
}
