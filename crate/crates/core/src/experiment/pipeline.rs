//! Compute phase: featurize, split, train every backbone once, finish it
//! into each model class and record test-set predictions. Everything the
//! analysis needs is kept in [`Predictions`], so reports can be regenerated
//! without retraining.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{Deployed, ExperimentConfig, CACHE_DIR_ENV};
use crate::dataset::{self, Dataset, DroppedColumn, RegimeKind, SplitSpec};
use crate::jobs::{run_keyed, with_threads};
use crate::linalg::prob_cross_entropy;
use crate::trainer::{threshold, train, ModelClass, TrainConfig};

pub const PREDICTIONS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Train,
    Rashomon,
    Analyze,
    Bounds,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self { stage, source: source.into() }
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

// --- ingest -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub content_hash: String,
    pub preprocessing_hash: String,
    pub n: usize,
    /// Engineered features, excluding the intercept column.
    pub d: usize,
    pub feature_names: Vec<String>,
    pub positive_label: String,
    pub negative_label: String,
    pub dropped_columns: Vec<DroppedColumn>,
    pub n_train: usize,
    pub n_calibration: usize,
    pub n_test: usize,
}

pub struct Prepared {
    pub data: Dataset,
    pub split: SplitSpec,
    /// Training rows left after the calibration holdout.
    pub pool: Vec<usize>,
    pub calibration: Vec<usize>,
    pub cached: bool,
}

impl Prepared {
    pub fn summary(&self) -> DatasetSummary {
        let p = &self.data.provenance;
        DatasetSummary {
            source: p.source.clone(),
            content_hash: p.content_hash.clone(),
            preprocessing_hash: p.preprocessing_hash.clone(),
            n: self.data.n(),
            d: self.data.d(),
            feature_names: self.data.feature_names.clone(),
            positive_label: p.labels.positive.clone(),
            negative_label: p.labels.negative.clone(),
            dropped_columns: p.dropped_columns.clone(),
            n_train: self.pool.len(),
            n_calibration: self.calibration.len(),
            n_test: self.split.test.len(),
        }
    }

    /// Split view whose training side is the pool, for regime subsampling.
    pub fn pool_split(&self) -> SplitSpec {
        SplitSpec { train: self.pool.clone(), ..self.split.clone() }
    }

    pub fn regime_indices(&self, kind: RegimeKind, config: &ExperimentConfig, seed: u64) -> Result<Vec<usize>, PipelineError> {
        let spec = config
            .experiment
            .regimes
            .iter()
            .find(|r| r.kind == kind)
            .ok_or_else(|| PipelineError::new(Stage::Config, format!("regime {} not configured", kind.name())))?;
        dataset::subsample_for_regime(&self.pool_split(), &spec.with_seed(seed)).at(Stage::Ingest)
    }

    pub fn indices_for(&self, data: DataKey, config: &ExperimentConfig, seed: u64) -> Result<Vec<usize>, PipelineError> {
        match data {
            DataKey::Full => Ok(self.pool.clone()),
            DataKey::Regime(k) => self.regime_indices(k, config, seed),
        }
    }
}

/// Load, split and featurize; the featurized matrix is cached under
/// `$CHURNLAB_CACHE_DIR` when that variable is set.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, PipelineError> {
    let cache_dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from);
    prepare_with_cache(config, cache_dir.as_deref())
}

pub fn prepare_with_cache(config: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Prepared, PipelineError> {
    let raw = dataset::load_csv(&config.dataset.path, &config.dataset.schema()).at(Stage::Ingest)?;
    let split = dataset::make_split(raw.n_rows(), config.split.test_fraction, config.split.seed).at(Stage::Ingest)?;
    let key = dataset::preprocessing_key(&raw, &config.dataset.features, Some(&split));
    let mut cached = false;
    let data = match cache_dir.map(|d| dataset::cache_path(d, &key)).filter(|p| p.is_file()) {
        Some(path) => {
            cached = true;
            tracing::info!(path = %path.display(), "dataset cache hit");
            dataset::read_cache(&path).at(Stage::Ingest)?
        }
        None => {
            let d = dataset::featurize(&raw, &config.dataset.features, Some(&split)).at(Stage::Ingest)?;
            if let Some(dir) = cache_dir {
                let path = dataset::write_cache(&d, dir).at(Stage::Ingest)?;
                tracing::info!(path = %path.display(), "dataset cache written");
            }
            d
        }
    };
    let (pool, calibration) = if config.split.calibration_fraction > 0.0 {
        dataset::partition(&split.train, config.split.calibration_fraction, config.split.seed).at(Stage::Ingest)?
    } else {
        (split.train.clone(), Vec::new())
    };
    Ok(Prepared { data, split, pool, calibration, cached })
}

// --- job plan ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "regime")]
pub enum DataKey {
    /// The whole training pool (model B and sets anchored at B).
    Full,
    /// A regime subsample (model A and sets anchored at A).
    Regime(RegimeKind),
}

impl DataKey {
    pub fn name(self) -> &'static str {
        match self {
            DataKey::Full => "full",
            DataKey::Regime(k) => k.name(),
        }
    }
}

pub fn model_key(data: DataKey, seed: u64) -> String {
    format!("{}/seed_{seed}", data.name())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BackboneJob {
    pub repetition: usize,
    /// Classes sharing one training config share one backbone.
    pub group: usize,
    pub data: DataKey,
    pub seed: u64,
    pub classes: Vec<ModelClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPlan {
    pub repetitions: Vec<(usize, u64)>,
    pub jobs: Vec<BackboneJob>,
    pub backbones: usize,
    pub models: usize,
}

/// Group classes by identical training configs (seed aside).
fn class_groups(config: &ExperimentConfig) -> Vec<(TrainConfig, Vec<ModelClass>)> {
    let mut groups: Vec<(TrainConfig, Vec<ModelClass>)> = Vec::new();
    for &class in &config.experiment.model_classes {
        let tc = config.train.get(class).with_seed(0);
        match groups.iter_mut().find(|(c, _)| *c == tc) {
            Some((_, v)) => v.push(class),
            None => groups.push((tc, vec![class])),
        }
    }
    groups
}

/// Data key of the set anchored for a regime.
pub fn anchor_data(config: &ExperimentConfig, regime: RegimeKind) -> DataKey {
    match config.experiment.deployed {
        Deployed::ModelA => DataKey::Regime(regime),
        Deployed::ModelB => DataKey::Full,
    }
}

/// Every backbone the experiment trains, deduplicated and in key order.
pub fn plan_jobs(config: &ExperimentConfig) -> JobPlan {
    let groups = class_groups(config);
    let seeds = config.rashomon.seeds();
    let mut jobs = Vec::new();
    for (rep, s0) in config.repetitions() {
        let mut keys: Vec<(DataKey, u64)> = vec![(DataKey::Full, s0)];
        for r in &config.experiment.regimes {
            keys.push((DataKey::Regime(r.kind), s0));
            let anchor = anchor_data(config, r.kind);
            keys.extend(seeds.iter().map(|&s| (anchor, s)));
        }
        keys.sort();
        keys.dedup();
        for (g, (_, classes)) in groups.iter().enumerate() {
            for &(data, seed) in &keys {
                jobs.push(BackboneJob { repetition: rep, group: g, data, seed, classes: classes.clone() });
            }
        }
    }
    jobs.sort();
    let models = jobs.iter().map(|j| j.classes.len()).sum();
    JobPlan { repetitions: config.repetitions(), backbones: jobs.len(), models, jobs }
}

// --- compute ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub data: DataKey,
    pub seed: u64,
    pub n_train: usize,
    /// Mean cross-entropy on the model's own training rows.
    pub train_loss: f64,
    /// Zero-one error on the model's own training rows.
    pub train_error: f64,
    pub scores: Vec<f64>,
    /// Predictive variance (uncertainty-aware class only).
    #[serde(default)]
    pub variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPredictions {
    pub class: ModelClass,
    pub repetition: usize,
    pub default_seed: u64,
    pub models: BTreeMap<String, ModelPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub prepare_seconds: f64,
    pub train_seconds: f64,
    pub analyze_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub format_version: u32,
    pub config_hash: String,
    pub dataset: DatasetSummary,
    pub test_ids: Vec<String>,
    pub y_test: Vec<u8>,
    pub runs: Vec<RunPredictions>,
    #[serde(default)]
    pub timing: Option<Timing>,
}

impl Predictions {
    pub fn run(&self, class: ModelClass, repetition: usize) -> Option<&RunPredictions> {
        self.runs.iter().find(|r| r.class == class && r.repetition == repetition)
    }
}

fn own_metrics(scores: &[f64], y: &[u8]) -> (f64, f64) {
    let n = y.len() as f64;
    let loss = scores.iter().zip(y).map(|(&p, &t)| prob_cross_entropy(p, f64::from(t))).sum::<f64>() / n;
    let err = scores.iter().zip(y).filter(|(&p, &t)| threshold(p) != t).count() as f64 / n;
    (loss, err)
}

/// Train all planned backbones on `threads` workers (0 = all cores) and
/// collect test predictions per class and repetition.
pub fn compute_predictions(
    config: &ExperimentConfig,
    prepared: &Prepared,
    threads: usize,
) -> Result<Predictions, PipelineError> {
    let plan = plan_jobs(config);
    let groups = class_groups(config);
    let data = &prepared.data;
    let test = &prepared.split.test;
    let done = AtomicUsize::new(0);
    let total = plan.jobs.len();
    let reps: BTreeMap<usize, u64> = config.repetitions().into_iter().collect();

    let results = with_threads(threads, || {
        run_keyed(plan.jobs.clone(), |job: &BackboneJob| -> Result<Vec<(ModelClass, ModelPrediction)>, PipelineError> {
            let s0 = reps[&job.repetition];
            let idx = prepared.indices_for(job.data, config, s0)?;
            let tc = groups[job.group].0.with_seed(job.seed);
            let backbone = train(data, &idx, &tc).at(Stage::Train)?;
            let y_train = data.labels_at(&idx);
            let mut out = Vec::with_capacity(job.classes.len());
            for &class in &job.classes {
                let model = class
                    .finish(backbone.clone(), data, &idx, &prepared.calibration, &config.head, job.seed)
                    .at(Stage::Train)?;
                let (train_loss, train_error) = own_metrics(&model.scores_at(data, &idx), &y_train);
                out.push((
                    class,
                    ModelPrediction {
                        data: job.data,
                        seed: job.seed,
                        n_train: idx.len(),
                        train_loss,
                        train_error,
                        scores: model.scores_at(data, test),
                        variances: model.variances_at(data, test),
                    },
                ));
            }
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            tracing::info!(
                "[{k}/{total}] rep {} {} seed {} trained",
                job.repetition,
                job.data.name(),
                job.seed
            );
            Ok(out)
        })
    })?;

    let mut runs: BTreeMap<(ModelClass, usize), RunPredictions> = BTreeMap::new();
    for (job, preds) in results {
        for (class, p) in preds {
            let run = runs.entry((class, job.repetition)).or_insert_with(|| RunPredictions {
                class,
                repetition: job.repetition,
                default_seed: reps[&job.repetition],
                models: BTreeMap::new(),
            });
            run.models.insert(model_key(job.data, job.seed), p);
        }
    }
    Ok(Predictions {
        format_version: PREDICTIONS_FORMAT_VERSION,
        config_hash: config.hash(),
        dataset: prepared.summary(),
        test_ids: test.iter().map(|i| i.to_string()).collect(),
        y_test: data.labels_at(test),
        runs: runs.into_values().collect(),
        timing: None,
    })
}

/// Full run: prepare, compute predictions, analyze.
pub fn run_experiment(
    config: &ExperimentConfig,
    threads: usize,
) -> Result<(super::report::StabilityReport, Predictions), PipelineError> {
    let t0 = Instant::now();
    let prepared = prepare(config)?;
    let prepare_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut preds = compute_predictions(config, &prepared, threads)?;
    let train_seconds = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let mut report = super::report::analyze(config, &preds)?;
    let timing = Timing {
        prepare_seconds,
        train_seconds,
        analyze_seconds: t2.elapsed().as_secs_f64(),
        threads: if threads == 0 { rayon::current_num_threads() } else { threads },
    };
    preds.timing = Some(timing.clone());
    report.timing = Some(timing);
    Ok((report, preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_deduplicates_shared_backbones() {
        let mut c = ExperimentConfig::minimal("x.csv", "y");
        c.experiment.seed_arrays = vec![vec![0, 1, 109, 10, 1234]];
        let plan = plan_jobs(&c);
        // full/s0 + per regime: 25 seeds (A's seed among them)
        assert_eq!(plan.backbones, 1 + 25 + 25);
        // both classes share the default training config
        assert_eq!(plan.models, 2 * plan.backbones);
        c.train.uncertainty_aware.epochs = 3;
        assert_eq!(plan_jobs(&c).backbones, 2 * 51);
    }

    #[test]
    fn deployed_b_anchors_on_full_data() {
        let mut c = ExperimentConfig::minimal("x.csv", "y");
        c.experiment.seed_arrays = vec![vec![0]];
        c.experiment.deployed = Deployed::ModelB;
        c.rashomon.m = Some(3);
        let plan = plan_jobs(&c);
        // full seeds {0, 1, 109} + one A per regime
        assert_eq!(plan.backbones, 3 + 2);
    }
}
