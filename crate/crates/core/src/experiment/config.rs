//! Experiment configuration: TOML or JSON, defaults filled per field,
//! unknown keys reported as warnings with the nearest known name, and
//! errors located by config path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{ColumnKind, FeatureConfig, RegimeKind, SchemaConfig, UpdateRegime};
use crate::rashomon::{default_seeds, CandidateGridConfig, Metric, RashomonConfig, DEFAULT_EPSILON, DEFAULT_SEED_ARRAYS};
use crate::rng::derive_seed;
use crate::trainer::{HeadConfig, ModelClass, TrainConfig};

pub const CACHE_DIR_ENV: &str = "CHURNLAB_CACHE_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: TOML parse error: {message}")]
    Toml { path: String, message: String },
    #[error("{path}: JSON parse error: {message}")]
    Json { path: String, message: String },
    #[error("invalid config:\n{}", format_errors(.errors))]
    Invalid { errors: Vec<FieldError>, warnings: Vec<ConfigWarning> },
}

fn format_errors(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("  {}: {}", e.path, e.message)).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigWarning {
    pub path: String,
    pub message: String,
    pub suggestion: Option<String>,
}

// --- schema -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub positive_label: Option<String>,
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnKind>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    #[serde(default)]
    pub features: FeatureConfig,
}

fn default_missing_tokens() -> Vec<String> {
    SchemaConfig::new("").missing_tokens
}

impl DatasetSpec {
    pub fn schema(&self) -> SchemaConfig {
        SchemaConfig {
            target: self.target.clone(),
            positive_label: self.positive_label.clone(),
            columns: self.columns.clone(),
            missing_tokens: self.missing_tokens.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default = "SplitConfig::default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Share of the training split held out for Platt scaling; 0 disables it.
    #[serde(default = "SplitConfig::default_calibration_fraction")]
    pub calibration_fraction: f64,
}

impl SplitConfig {
    fn default_test_fraction() -> f64 {
        0.2
    }
    fn default_calibration_fraction() -> f64 {
        0.1
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2, seed: 0, calibration_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassConfigs {
    #[serde(default)]
    pub plain: TrainConfig,
    #[serde(default)]
    pub uncertainty_aware: TrainConfig,
}

impl ClassConfigs {
    pub fn get(&self, class: ModelClass) -> &TrainConfig {
        match class {
            ModelClass::Plain => &self.plain,
            ModelClass::UncertaintyAware => &self.uncertainty_aware,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    /// Number of seeds taken from the default seed list when `seeds` is unset.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_metric() -> Metric {
    Metric::LossGap
}

impl Default for RashomonSection {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, metric: Metric::LossGap, m: None, seeds: None }
    }
}

impl RashomonSection {
    pub fn seeds(&self) -> Vec<u64> {
        if let Some(s) = &self.seeds {
            return s.clone();
        }
        let defaults = default_seeds();
        match self.m {
            None => defaults,
            Some(m) if m <= defaults.len() => defaults[..m].to_vec(),
            Some(m) => {
                let mut s = defaults;
                let mut k = 0u64;
                while s.len() < m {
                    let cand = derive_seed(0, 0, k) % 1_000_000;
                    if !s.contains(&cand) {
                        s.push(cand);
                    }
                    k += 1;
                }
                s
            }
        }
    }

    pub fn resolve(&self) -> RashomonConfig {
        RashomonConfig { epsilon: self.epsilon, metric: self.metric, seeds: self.seeds() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    #[serde(default)]
    pub fraction: Option<f64>,
}

impl RegimeSpec {
    pub fn fraction(&self) -> f64 {
        self.fraction.unwrap_or_else(|| self.kind.default_fraction())
    }

    pub fn with_seed(&self, seed: u64) -> UpdateRegime {
        UpdateRegime { kind: self.kind, fraction: self.fraction(), seed }
    }
}

/// Which model of an update anchors the Rashomon set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deployed {
    ModelA,
    ModelB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    #[serde(default = "default_classes")]
    pub model_classes: Vec<ModelClass>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<RegimeSpec>,
    /// One repetition per array; its first seed is the default seed.
    #[serde(default = "default_seed_arrays")]
    pub seed_arrays: Vec<Vec<u64>>,
    #[serde(default = "default_deployed")]
    pub deployed: Deployed,
    /// Regime whose Rashomon set is reported as the multiplicity experiment.
    #[serde(default = "default_multiplicity_regime")]
    pub multiplicity_regime: RegimeKind,
    #[serde(default = "default_gammas")]
    pub smooth_churn_gammas: Vec<f64>,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_n_thresholds")]
    pub n_thresholds: usize,
}

fn default_classes() -> Vec<ModelClass> {
    ModelClass::ALL.to_vec()
}
fn default_regimes() -> Vec<RegimeSpec> {
    vec![RegimeSpec { kind: RegimeKind::Large, fraction: None }, RegimeSpec { kind: RegimeKind::Small, fraction: None }]
}
fn default_seed_arrays() -> Vec<Vec<u64>> {
    DEFAULT_SEED_ARRAYS.iter().map(|a| a.to_vec()).collect()
}
fn default_deployed() -> Deployed {
    Deployed::ModelA
}
fn default_multiplicity_regime() -> RegimeKind {
    RegimeKind::Small
}
fn default_gammas() -> Vec<f64> {
    vec![0.1, 0.01]
}
fn default_bins() -> usize {
    crate::metrics::DEFAULT_BINS
}
fn default_n_thresholds() -> usize {
    crate::metrics::DEFAULT_THRESHOLDS
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            model_classes: default_classes(),
            regimes: default_regimes(),
            seed_arrays: default_seed_arrays(),
            deployed: default_deployed(),
            multiplicity_regime: default_multiplicity_regime(),
            smooth_churn_gammas: default_gammas(),
            n_bins: default_bins(),
            n_thresholds: default_n_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSection {
    /// Stability constant for the expected smooth-churn bound; the bound is
    /// skipped in experiment reports when unset.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "BoundsSection::default_gamma")]
    pub gamma: f64,
    /// Replacement trials for the β estimate of `bounds-check`.
    #[serde(default = "BoundsSection::default_trials")]
    pub beta_trials: usize,
    #[serde(default = "BoundsSection::default_probe")]
    pub probe_points: usize,
    /// Model pairs for the zero expected churn difference test.
    #[serde(default = "BoundsSection::default_pairs")]
    pub zero_churn_pairs: usize,
    /// L2 weight of the logistic regression used by `bounds-check`.
    #[serde(default = "BoundsSection::default_l2")]
    pub l2_penalty: f64,
}

impl BoundsSection {
    fn default_gamma() -> f64 {
        0.1
    }
    fn default_trials() -> usize {
        10
    }
    fn default_probe() -> usize {
        500
    }
    fn default_pairs() -> usize {
        20
    }
    fn default_l2() -> f64 {
        1e-3
    }
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            beta: None,
            gamma: Self::default_gamma(),
            beta_trials: Self::default_trials(),
            probe_points: Self::default_probe(),
            zero_churn_pairs: Self::default_pairs(),
            l2_penalty: Self::default_l2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesSection {
    #[serde(default = "CandidatesSection::default_l2")]
    pub l2_penalty: f64,
    #[serde(default)]
    pub grid: CandidateGridConfig,
}

impl CandidatesSection {
    fn default_l2() -> f64 {
        1e-3
    }
}

impl Default for CandidatesSection {
    fn default() -> Self {
        Self { l2_penalty: Self::default_l2(), grid: CandidateGridConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: ClassConfigs,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub rashomon: RashomonSection,
    #[serde(default)]
    pub candidates: CandidatesSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Fully defaulted config for a dataset path and target column.
    pub fn minimal(path: impl Into<PathBuf>, target: impl Into<String>) -> Self {
        let v = serde_json::json!({ "dataset": { "path": path.into(), "target": target.into() } });
        serde_json::from_value(v).expect("minimal config deserializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Repetitions as (index, default seed).
    pub fn repetitions(&self) -> Vec<(usize, u64)> {
        self.experiment.seed_arrays.iter().enumerate().map(|(r, a)| (r, a[0])).collect()
    }

    /// Keep a single repetition whose default seed is `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.experiment.seed_arrays = vec![vec![seed]];
    }

    /// Settings the experiments depend on but the source protocol leaves open.
    pub fn assumptions(&self) -> BTreeMap<String, String> {
        let mut a = BTreeMap::new();
        let t = &self.train.plain;
        a.insert("train.arch".into(), format!("{:?}", t.arch));
        a.insert("train.activation".into(), "relu".into());
        a.insert("train.optimizer".into(), format!("{:?}", t.optimizer).to_lowercase());
        a.insert("train.epochs".into(), t.epochs.to_string());
        a.insert("train.dropout".into(), "none".into());
        a.insert("train.batch_norm".into(), "none".into());
        a.insert("head.lambda".into(), self.head.lambda.to_string());
        a.insert("head.features".into(), self.head.features.to_string());
        a.insert("rashomon.epsilon".into(), self.rashomon.epsilon.to_string());
        a.insert("rashomon.metric".into(), format!("{:?}", self.rashomon.metric));
        a.insert("split.test_fraction".into(), self.split.test_fraction.to_string());
        a.insert("split.calibration_fraction".into(), self.split.calibration_fraction.to_string());
        a.insert("experiment.deployed".into(), format!("{:?}", self.experiment.deployed));
        a.insert("experiment.multiplicity_regime".into(), self.experiment.multiplicity_regime.name().into());
        a.insert("metrics.margin".into(), "(2f-1)(2y-1)".into());
        a.insert("metrics.empty_churn_set".into(), "common arbitrariness 1.0, flagged".into());
        a.insert("predict.tie".into(), "score 0.5 -> class 1".into());
        a
    }
}

// --- parsing ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

pub fn parse_config_text(text: &str, format: ConfigFormat, origin: &str) -> Result<Value, ConfigError> {
    match format {
        ConfigFormat::Toml => {
            toml::from_str::<Value>(text).map_err(|e| ConfigError::Toml { path: origin.into(), message: e.to_string() })
        }
        ConfigFormat::Json => {
            serde_json::from_str(text).map_err(|e| ConfigError::Json { path: origin.into(), message: e.to_string() })
        }
    }
}

/// Read a config file and resolve a relative `dataset.path` against the
/// file's directory.
pub fn load_config_value(path: &Path) -> Result<Value, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let mut value = parse_config_text(&text, ConfigFormat::from_path(path), &path.display().to_string())?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for key in ["path"] {
        if let Some(Value::String(p)) = value.pointer_mut(&format!("/dataset/{key}")) {
            let pb = PathBuf::from(&*p);
            if pb.is_relative() {
                *p = base.join(pb).display().to_string();
            }
        }
    }
    if let Some(Value::String(p)) = value.pointer_mut("/output_dir") {
        let pb = PathBuf::from(&*p);
        if pb.is_relative() {
            *p = base.join(pb).display().to_string();
        }
    }
    Ok(value)
}

/// Replace the seed arrays of a raw config by a single repetition.
pub fn apply_seed_override(value: &mut Value, seed: u64) {
    if !value.is_object() {
        return;
    }
    let ex = value.as_object_mut().expect("object").entry("experiment").or_insert_with(|| Value::Object(Default::default()));
    if let Value::Object(m) = ex {
        m.insert("seed_arrays".into(), serde_json::json!([[seed]]));
    }
}

/// Maps whose keys are user-chosen (column names).
const FREE_FORM: &[&str] = &["dataset.columns"];

fn template() -> Value {
    let mut cfg = ExperimentConfig::minimal("data.csv", "target");
    // materialize optional sections so their keys are known
    cfg.rashomon.m = Some(1);
    cfg.rashomon.seeds = Some(vec![0]);
    cfg.bounds.beta = Some(0.0);
    cfg.head.lengthscale = Some(1.0);
    cfg.output_dir = Some("out".into());
    cfg.dataset.positive_label = Some(String::new());
    cfg.experiment.regimes[0].fraction = Some(0.5);
    serde_json::to_value(cfg).expect("template serializes")
}

fn collect_unknown(user: &Value, known: &Value, path: &str, out: &mut Vec<ConfigWarning>) {
    if FREE_FORM.contains(&path) {
        return;
    }
    match (user, known) {
        (Value::Object(u), Value::Object(k)) => {
            for (key, val) in u {
                let child = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match k.get(key) {
                    Some(kv) => collect_unknown(val, kv, &child, out),
                    None => {
                        let suggestion = k
                            .keys()
                            .map(|cand| (strsim::jaro_winkler(key, cand), cand))
                            .filter(|(s, _)| *s >= 0.75)
                            .max_by(|a, b| a.0.total_cmp(&b.0))
                            .map(|(_, c)| c.clone());
                        let message = match &suggestion {
                            Some(s) => format!("unknown field `{key}` ignored; did you mean `{s}`?"),
                            None => format!("unknown field `{key}` ignored"),
                        };
                        out.push(ConfigWarning { path: child, message, suggestion });
                    }
                }
            }
        }
        (Value::Array(u), Value::Array(k)) => {
            if let Some(first) = k.first() {
                for (i, val) in u.iter().enumerate() {
                    collect_unknown(val, first, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

/// Unknown keys anywhere in `value`, with nearest-name suggestions.
pub fn unknown_field_warnings(value: &Value) -> Vec<ConfigWarning> {
    let mut out = Vec::new();
    collect_unknown(value, &template(), "", &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedConfig {
    pub config: ExperimentConfig,
    pub warnings: Vec<ConfigWarning>,
    pub config_hash: String,
}

/// Deserialize with defaults, then check every field constraint. All errors
/// are collected; unknown keys only warn. `check_files` also requires the
/// dataset file to exist.
pub fn validate_config(value: &Value, check_files: bool) -> Result<ValidatedConfig, ConfigError> {
    let warnings = unknown_field_warnings(value);
    let config: ExperimentConfig = match serde_path_to_error::deserialize(value.clone()) {
        Ok(c) => c,
        Err(e) => {
            let path = e.path().to_string();
            let errors = vec![FieldError { path, message: e.into_inner().to_string() }];
            return Err(ConfigError::Invalid { errors, warnings });
        }
    };
    let errors = semantic_errors(&config, check_files);
    if !errors.is_empty() {
        return Err(ConfigError::Invalid { errors, warnings });
    }
    let config_hash = config.hash();
    Ok(ValidatedConfig { config, warnings, config_hash })
}

fn semantic_errors(c: &ExperimentConfig, check_files: bool) -> Vec<FieldError> {
    let mut errs = Vec::new();
    let mut err = |path: &str, message: &str| errs.push(FieldError { path: path.into(), message: message.into() });

    if check_files && !c.dataset.path.is_file() {
        err("dataset.path", &format!("file not found: {}", c.dataset.path.display()));
    }
    if c.dataset.target.is_empty() {
        err("dataset.target", "target must be non-empty");
    }
    if !(c.split.test_fraction > 0.0 && c.split.test_fraction < 1.0) {
        err("split.test_fraction", "test_fraction must be in (0, 1)");
    }
    if !(c.split.calibration_fraction >= 0.0 && c.split.calibration_fraction < 1.0) {
        err("split.calibration_fraction", "calibration_fraction must be in [0, 1)");
    }
    for class in ModelClass::ALL {
        if let Err(e) = c.train.get(class).validate() {
            err(&format!("train.{}", class.name()), &e.to_string());
        }
    }
    if let Err(e) = c.head.validate() {
        err("head", &e.to_string());
    }
    if !(c.rashomon.epsilon > 0.0 && c.rashomon.epsilon.is_finite()) {
        err("rashomon.epsilon", "epsilon must be > 0");
    }
    if c.rashomon.m == Some(0) {
        err("rashomon.m", "m must be >= 1");
    }
    if let Some(s) = &c.rashomon.seeds {
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        if s.is_empty() {
            err("rashomon.seeds", "seeds must be non-empty");
        } else if d.len() != s.len() {
            err("rashomon.seeds", "seeds must be distinct");
        }
        if let Some(m) = c.rashomon.m {
            if m != s.len() {
                err("rashomon.m", "m must equal the number of seeds");
            }
        }
    }
    if let Err(e) = c.candidates.grid.validate() {
        err("candidates.grid", &e.to_string());
    }
    if !(c.candidates.l2_penalty >= 0.0) {
        err("candidates.l2_penalty", "l2_penalty must be >= 0");
    }
    let ex = &c.experiment;
    if ex.model_classes.is_empty() {
        err("experiment.model_classes", "at least one model class is required");
    }
    let mut classes = ex.model_classes.clone();
    classes.sort();
    classes.dedup();
    if classes.len() != ex.model_classes.len() {
        err("experiment.model_classes", "model classes must be distinct");
    }
    if ex.regimes.is_empty() {
        err("experiment.regimes", "at least one regime is required");
    }
    for (i, r) in ex.regimes.iter().enumerate() {
        if !(r.fraction() > 0.0 && r.fraction() <= 1.0) {
            err(&format!("experiment.regimes[{i}].fraction"), "fraction must be in (0, 1]");
        }
    }
    let mut kinds: Vec<RegimeKind> = ex.regimes.iter().map(|r| r.kind).collect();
    kinds.sort();
    kinds.dedup();
    if kinds.len() != ex.regimes.len() {
        err("experiment.regimes", "regime kinds must be distinct");
    }
    if !ex.regimes.iter().any(|r| r.kind == ex.multiplicity_regime) {
        err("experiment.multiplicity_regime", "multiplicity_regime must be one of the configured regimes");
    }
    if ex.seed_arrays.is_empty() || ex.seed_arrays.iter().any(Vec::is_empty) {
        err("experiment.seed_arrays", "seed arrays must be non-empty");
    }
    if ex.smooth_churn_gammas.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        err("experiment.smooth_churn_gammas", "gamma must be > 0");
    }
    if ex.n_bins == 0 {
        err("experiment.n_bins", "n_bins must be >= 1");
    }
    if ex.n_thresholds == 0 {
        err("experiment.n_thresholds", "n_thresholds must be >= 1");
    }
    if let Some(b) = c.bounds.beta {
        if !(b >= 0.0 && b.is_finite()) {
            err("bounds.beta", "beta must be >= 0");
        }
    }
    if !(c.bounds.gamma > 0.0 && c.bounds.gamma.is_finite()) {
        err("bounds.gamma", "gamma must be > 0");
    }
    if !(c.bounds.l2_penalty > 0.0) {
        err("bounds.l2_penalty", "l2_penalty must be > 0");
    }
    errs
}
