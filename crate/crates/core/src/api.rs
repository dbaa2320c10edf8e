//! HTTP/JSON wire types shared by the service and its clients.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::RegimeKind;
use crate::experiment::checks::BoundsCheckReport;
use crate::experiment::config::{ConfigWarning, FieldError};
use crate::experiment::pipeline::{DataKey, DatasetSummary, JobPlan, Predictions, Stage};
use crate::experiment::report::{SmoothChurn, StabilityReport};
use crate::metrics::{CommonArbitrariness, CurvePoint, Discrepancy, FlipBin, PredictionMatrix, DEFAULT_BINS, DEFAULT_THRESHOLDS};
use crate::rashomon::RashomonBundle;
use crate::trainer::{Model, ModelClass};

pub mod paths {
    pub const HEALTH: &str = "/health";
    pub const VALIDATE: &str = "/v1/config/validate";
    pub const PLAN: &str = "/v1/plan";
    pub const INGEST: &str = "/v1/ingest";
    pub const TRAIN: &str = "/v1/train";
    pub const RASHOMON: &str = "/v1/rashomon";
    pub const CHURN: &str = "/v1/churn";
    pub const MULTIPLICITY: &str = "/v1/metrics/multiplicity";
    pub const ARBITRARINESS: &str = "/v1/metrics/common-arbitrariness";
    pub const PLOTS: &str = "/v1/metrics/plots";
    pub const ANALYZE: &str = "/v1/analyze";
    pub const BOUNDS_CHECK: &str = "/v1/bounds/check";
    pub const EXPERIMENTS: &str = "/v1/experiments";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    InvalidConfig,
    BadRequest,
    NotFound,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub error: String,
    #[serde(default)]
    pub stage: Option<Stage>,
    #[serde(default)]
    pub field_errors: Vec<FieldError>,
    #[serde(default)]
    pub warnings: Vec<ConfigWarning>,
}

/// Any request that only carries a raw config (TOML or JSON parsed to a
/// JSON value) and a worker count (0 = all cores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRequest {
    pub config: Value,
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub dataset: DatasetSummary,
    pub cached: bool,
    pub warnings: Vec<ConfigWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub config_hash: String,
    pub plan: JobPlan,
    pub warnings: Vec<ConfigWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub config: Value,
    #[serde(default = "plain")]
    pub class: ModelClass,
    /// Training rows: the full pool or a regime subsample.
    #[serde(default = "full")]
    pub data: DataKey,
    /// Training seed; defaults to the repetition's default seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub repetition: usize,
}

fn plain() -> ModelClass {
    ModelClass::Plain
}
fn full() -> DataKey {
    DataKey::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model: Model,
    pub class: ModelClass,
    pub data: DataKey,
    pub seed: u64,
    pub n_train: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RashomonMode {
    Randomized,
    Candidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonRequest {
    pub config: Value,
    pub mode: RashomonMode,
    #[serde(default = "plain")]
    pub class: ModelClass,
    /// Anchor rows: a regime subsample, or the full pool when unset.
    #[serde(default)]
    pub regime: Option<RegimeKind>,
    #[serde(default)]
    pub repetition: usize,
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonResponse {
    pub bundle: RashomonBundle,
    /// Test-sample multiplicity of the set, baseline in row 0.
    pub test: MultiplicityResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnRequest {
    pub scores_a: Vec<f64>,
    pub scores_b: Vec<f64>,
    /// True labels; enables the loss-based quantities.
    #[serde(default)]
    pub y: Option<Vec<u8>>,
    #[serde(default)]
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnResponse {
    pub churn: f64,
    pub churn_unstable: Vec<usize>,
    pub signed_loss_churn: Option<f64>,
    pub smooth_churn: Vec<SmoothChurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityRequest {
    pub matrix: PredictionMatrix,
    #[serde(default)]
    pub baseline: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityResponse {
    pub ambiguity: f64,
    pub baseline_ambiguity: f64,
    pub discrepancy: Discrepancy,
    pub rashomon_unstable: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArbitrarinessRequest {
    pub rashomon_unstable: Vec<usize>,
    pub churn_unstable: Vec<usize>,
}

pub type ArbitrarinessResponse = CommonArbitrariness;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRequest {
    pub scores: Vec<f64>,
    pub unstable: Vec<usize>,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_thresholds")]
    pub n_thresholds: usize,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_thresholds() -> usize {
    DEFAULT_THRESHOLDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotResponse {
    pub bins: Vec<FlipBin>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub config: Value,
    pub predictions: Predictions,
}

pub type AnalyzeResponse = StabilityReport;
pub type BoundsCheckResponse = BoundsCheckReport;

/// How far `run` goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStage {
    Ingest,
    Train,
    Analyze,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRequest {
    pub config: Value,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub stage: RunStage,
    /// Required for the analyze stage; reused instead of retraining.
    #[serde(default)]
    pub predictions: Option<Predictions>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentAccepted {
    pub id: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: DatasetSummary,
    #[serde(default)]
    pub predictions: Option<Predictions>,
    #[serde(default)]
    pub report: Option<StabilityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStatus {
    pub id: String,
    pub state: JobState,
    pub stage: RunStage,
    pub config_hash: String,
    pub elapsed_seconds: f64,
    #[serde(default)]
    pub error: Option<ErrorBody>,
    #[serde(default)]
    pub result: Option<ExperimentResult>,
}
