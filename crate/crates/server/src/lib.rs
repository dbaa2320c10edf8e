//! HTTP/JSON front end for churnlab. Every compute endpoint runs on the
//! blocking pool behind a semaphore so at most `max_jobs` heavy jobs run at
//! once; each job parallelizes internally with rayon.

pub mod error;
pub mod ops;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use churnlab_core::api::{paths, *};
use churnlab_core::experiment::config::validate_config;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub use error::ApiError;

struct JobEntry {
    status: ExperimentStatus,
    started: Instant,
}

#[derive(Clone)]
pub struct AppState {
    permits: Arc<Semaphore>,
    jobs: Arc<Mutex<HashMap<String, JobEntry>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(max_jobs: usize) -> Self {
        Self {
            permits: Arc::new(Semaphore::new(max_jobs.max(1))),
            jobs: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(1)
    }
}

/// Run `op` on the blocking pool once a job permit is free.
async fn blocking<T, F>(state: &AppState, op: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    let _permit = state.permits.clone().acquire_owned().await.map_err(|e| ApiError::failed(None, e.to_string()))?;
    tokio::task::spawn_blocking(op).await.map_err(|e| ApiError::failed(None, format!("worker panicked: {e}")))?
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn validate(Json(req): Json<ConfigRequest>) -> Result<Json<churnlab_core::experiment::config::ValidatedConfig>, ApiError> {
    Ok(Json(ops::validate(&req.config)?))
}

async fn plan(Json(req): Json<ConfigRequest>) -> Result<Json<PlanResponse>, ApiError> {
    Ok(Json(ops::plan(&req)?))
}

macro_rules! blocking_handler {
    ($name:ident, $req:ty, $resp:ty, $op:path) => {
        async fn $name(State(state): State<AppState>, Json(req): Json<$req>) -> Result<Json<$resp>, ApiError> {
            Ok(Json(blocking(&state, move || $op(&req)).await?))
        }
    };
}

blocking_handler!(ingest, ConfigRequest, IngestResponse, ops::ingest);
blocking_handler!(train, TrainRequest, TrainResponse, ops::train);
blocking_handler!(rashomon, RashomonRequest, RashomonResponse, ops::rashomon);
blocking_handler!(analyze, AnalyzeRequest, AnalyzeResponse, ops::analyze);
blocking_handler!(bounds_check, ConfigRequest, BoundsCheckResponse, ops::bounds_check);

async fn churn(Json(req): Json<ChurnRequest>) -> Result<Json<ChurnResponse>, ApiError> {
    Ok(Json(ops::churn(&req)?))
}

async fn multiplicity(Json(req): Json<MultiplicityRequest>) -> Result<Json<MultiplicityResponse>, ApiError> {
    Ok(Json(ops::multiplicity(&req)?))
}

async fn arbitrariness(Json(req): Json<ArbitrarinessRequest>) -> Json<ArbitrarinessResponse> {
    Json(ops::arbitrariness(&req))
}

async fn plots(Json(req): Json<PlotRequest>) -> Result<Json<PlotResponse>, ApiError> {
    Ok(Json(ops::plots(&req)?))
}

fn update(state: &AppState, id: &str, f: impl FnOnce(&mut JobEntry)) {
    if let Some(e) = state.jobs.lock().expect("job table").get_mut(id) {
        f(e);
        e.status.elapsed_seconds = e.started.elapsed().as_secs_f64();
    }
}

async fn submit(
    State(state): State<AppState>,
    Json(req): Json<ExperimentRequest>,
) -> Result<(StatusCode, Json<ExperimentAccepted>), ApiError> {
    // reject bad configs up front; the job itself only fails on compute errors
    let check_files = req.stage != RunStage::Analyze;
    let v = validate_config(&req.config, check_files)?;
    let id = format!("exp-{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let status = ExperimentStatus {
        id: id.clone(),
        state: JobState::Queued,
        stage: req.stage,
        config_hash: v.config_hash.clone(),
        elapsed_seconds: 0.0,
        error: None,
        result: None,
    };
    state.jobs.lock().expect("job table").insert(id.clone(), JobEntry { status, started: Instant::now() });
    let st = state.clone();
    let job = id.clone();
    tokio::spawn(async move {
        let permit = st.permits.clone().acquire_owned().await;
        update(&st, &job, |e| e.status.state = JobState::Running);
        tracing::info!(id = %job, "experiment running");
        let out = tokio::task::spawn_blocking(move || ops::run_experiment(&req)).await;
        drop(permit);
        let out = out.unwrap_or_else(|e| Err(ApiError::failed(None, format!("worker panicked: {e}"))));
        update(&st, &job, |e| match out {
            Ok(r) => {
                e.status.state = JobState::Succeeded;
                e.status.result = Some(r);
            }
            Err(err) => {
                tracing::error!(id = %e.status.id, "experiment failed: {err}");
                e.status.state = JobState::Failed;
                e.status.error = Some(err.0);
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(ExperimentAccepted { id, config_hash: v.config_hash })))
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ExperimentStatus>, ApiError> {
    let jobs = state.jobs.lock().expect("job table");
    let e = jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("no experiment {id}")))?;
    let mut s = e.status.clone();
    if !s.state.is_terminal() {
        s.elapsed_seconds = e.started.elapsed().as_secs_f64();
    }
    Ok(Json(s))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(paths::HEALTH, get(health))
        .route(paths::VALIDATE, post(validate))
        .route(paths::PLAN, post(plan))
        .route(paths::INGEST, post(ingest))
        .route(paths::TRAIN, post(train))
        .route(paths::RASHOMON, post(rashomon))
        .route(paths::CHURN, post(churn))
        .route(paths::MULTIPLICITY, post(multiplicity))
        .route(paths::ARBITRARINESS, post(arbitrariness))
        .route(paths::PLOTS, post(plots))
        .route(paths::ANALYZE, post(analyze))
        .route(paths::BOUNDS_CHECK, post(bounds_check))
        .route(paths::EXPERIMENTS, post(submit))
        .route(&format!("{}/{{id}}", paths::EXPERIMENTS), get(status))
        .layer(axum::extract::DefaultBodyLimit::max(1 << 30))
        .with_state(state)
}

/// Bind `addr` and serve until the task is dropped. Returns the bound
/// address (useful with port 0).
pub async fn spawn(addr: SocketAddr, max_jobs: usize) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(AppState::new(max_jobs));
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

pub async fn serve(addr: SocketAddr, max_jobs: usize) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(max_jobs))).await
}
