//! Blocking operations behind each endpoint. Handlers run these on the
//! blocking pool.

use churnlab_core::api::*;
use churnlab_core::experiment::checks::{bounds_check as run_bounds_check, BoundsCheckReport};
use churnlab_core::experiment::config::{validate_config, ValidatedConfig};
use churnlab_core::experiment::pipeline::{self, prepare, AtStage, DataKey, Prepared, Stage};
use churnlab_core::experiment::report::{self, SmoothChurn, StabilityReport};
use churnlab_core::jobs::{run_keyed, with_threads};
use churnlab_core::metrics::{self, PredictionMatrix, SmoothChurnParams};
use churnlab_core::rashomon::{self, RashomonError, RashomonSet};
use churnlab_core::trainer::{error_rate, mean_log_loss, Model, ModelClass, TrainError};
use serde_json::Value;

use crate::error::ApiError;

fn valid(config: &Value) -> Result<ValidatedConfig, ApiError> {
    let v = validate_config(config, true)?;
    for w in &v.warnings {
        tracing::warn!(path = %w.path, "{}", w.message);
    }
    Ok(v)
}

pub fn validate(config: &Value) -> Result<ValidatedConfig, ApiError> {
    Ok(validate_config(config, true)?)
}

pub fn plan(req: &ConfigRequest) -> Result<PlanResponse, ApiError> {
    let v = validate_config(&req.config, true)?;
    Ok(PlanResponse { config_hash: v.config_hash, plan: pipeline::plan_jobs(&v.config), warnings: v.warnings })
}

pub fn ingest(req: &ConfigRequest) -> Result<IngestResponse, ApiError> {
    let v = valid(&req.config)?;
    let p = prepare(&v.config)?;
    Ok(IngestResponse { dataset: p.summary(), cached: p.cached, warnings: v.warnings })
}

fn default_seed(v: &ValidatedConfig, repetition: usize) -> Result<u64, ApiError> {
    v.config
        .repetitions()
        .get(repetition)
        .map(|r| r.1)
        .ok_or_else(|| ApiError::bad_request(format!("repetition {repetition} out of range")))
}

fn auc_or_none(scores: &[f64], y: &[u8]) -> Option<f64> {
    metrics::auc(scores, y).ok()
}

pub fn train(req: &TrainRequest) -> Result<TrainResponse, ApiError> {
    let v = valid(&req.config)?;
    let s0 = default_seed(&v, req.repetition)?;
    let seed = req.seed.unwrap_or(s0);
    let p = prepare(&v.config)?;
    let idx = p.indices_for(req.data, &v.config, s0)?;
    let cfg = v.config.train.get(req.class).with_seed(seed);
    let model = req.class.fit(&p.data, &idx, &p.calibration, &cfg, &v.config.head).at(Stage::Train)?;
    let test = &p.split.test;
    Ok(TrainResponse {
        class: req.class,
        data: req.data,
        seed,
        n_train: idx.len(),
        train_loss: mean_log_loss(&model, &p.data, &idx),
        train_error: error_rate(&model, &p.data, &idx),
        test_error: error_rate(&model, &p.data, test),
        test_auc: auc_or_none(&model.scores_at(&p.data, test), &p.data.labels_at(test)),
        model,
    })
}

fn set_multiplicity(set: &RashomonSet, p: &Prepared) -> Result<MultiplicityResponse, ApiError> {
    let test = &p.split.test;
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    if let Some(b) = &set.baseline {
        rows.push(b.scores_at(&p.data, test));
        ids.push("baseline".to_owned());
    }
    for m in &set.members {
        rows.push(m.model().scores_at(&p.data, test));
        ids.push(m.id.clone());
    }
    let pm = PredictionMatrix::new(rows, test.iter().map(|i| i.to_string()).collect(), ids)?;
    multiplicity(&MultiplicityRequest { matrix: pm, baseline: 0 })
}

pub fn rashomon(req: &RashomonRequest) -> Result<RashomonResponse, ApiError> {
    let v = valid(&req.config)?;
    let c = &v.config;
    let s0 = default_seed(&v, req.repetition)?;
    let p = prepare(c)?;
    let data_key = req.regime.map_or(DataKey::Full, DataKey::Regime);
    let idx = p.indices_for(data_key, c, s0)?;
    let data = &p.data;
    let set = with_threads(req.threads, || -> Result<RashomonSet, ApiError> {
        match req.mode {
            RashomonMode::Randomized => {
                let tc = c.train.get(req.class);
                let fit = |s: u64| req.class.fit(data, &idx, &p.calibration, &tc.with_seed(s), &c.head);
                let rs = c.rashomon.resolve();
                let baseline = fit(s0).at(Stage::Rashomon)?;
                let trained = run_keyed(rs.seeds.clone(), |&s| fit(s)).at(Stage::Rashomon)?;
                Ok(rashomon::assemble_randomized(trained, Some(baseline), &rs, data, &idx).at(Stage::Rashomon)?)
            }
            RashomonMode::Candidates => {
                if req.class != ModelClass::Plain {
                    return Err(ApiError::bad_request("candidate sets are built for the plain logistic class only"));
                }
                let l2 = c.candidates.l2_penalty;
                let base = rashomon::fit_baseline(data, &idx, &rashomon::candidate_baseline_config(l2))
                    .map_err(RashomonError::from)
                    .at(Stage::Rashomon)?;
                let grid = &c.candidates.grid;
                let targets = if grid.target_examples.is_empty() {
                    rashomon::nearest_to_half(&Model::Plain(base.clone()), data, &p.split.test, grid.target_count)
                } else {
                    grid.target_examples.clone()
                };
                if let Some(&bad) = targets.iter().find(|&&t| t >= data.n()) {
                    return Err(ApiError::bad_request(format!("target example {bad} out of range")));
                }
                Ok(rashomon::constrained_candidates(data, &idx, &base, l2, &targets, grid, c.rashomon.epsilon)
                    .at(Stage::Rashomon)?)
            }
        }
    })?;
    let test = set_multiplicity(&set, &p)?;
    Ok(RashomonResponse { bundle: set.into(), test })
}

pub fn churn(req: &ChurnRequest) -> Result<ChurnResponse, ApiError> {
    let pm = PredictionMatrix::from_scores(vec![req.scores_a.clone(), req.scores_b.clone()])?;
    let (a, b) = (pm.row_labels(0), pm.row_labels(1));
    let mut smooth = Vec::new();
    let mut signed = None;
    if let Some(y) = &req.y {
        signed = Some(metrics::signed_loss_churn(&req.scores_a, &req.scores_b, y)?);
        for &g in &req.gammas {
            let value = metrics::smooth_churn(&req.scores_a, &req.scores_b, y, SmoothChurnParams::new(g)?)?;
            smooth.push(SmoothChurn { gamma: g, value });
        }
    } else if !req.gammas.is_empty() {
        return Err(ApiError::bad_request("smooth churn needs labels `y`"));
    }
    Ok(ChurnResponse {
        churn: metrics::churn(a, b)?,
        churn_unstable: metrics::churn_unstable_set(a, b)?,
        signed_loss_churn: signed,
        smooth_churn: smooth,
    })
}

pub fn multiplicity(req: &MultiplicityRequest) -> Result<MultiplicityResponse, ApiError> {
    let pm = &req.matrix;
    Ok(MultiplicityResponse {
        ambiguity: metrics::empirical_ambiguity(pm)?,
        baseline_ambiguity: metrics::baseline_ambiguity(pm, req.baseline)?,
        discrepancy: metrics::discrepancy(pm, req.baseline)?,
        rashomon_unstable: metrics::rashomon_unstable_set(pm),
    })
}

pub fn arbitrariness(req: &ArbitrarinessRequest) -> ArbitrarinessResponse {
    metrics::common_arbitrariness(&req.rashomon_unstable, &req.churn_unstable)
}

pub fn plots(req: &PlotRequest) -> Result<PlotResponse, ApiError> {
    if req.n_thresholds == 0 {
        return Err(ApiError::bad_request("n_thresholds must be >= 1"));
    }
    let u: Vec<f64> = req.scores.iter().map(|&p| churnlab_core::trainer::pointwise_uncertainty(p)).collect();
    Ok(PlotResponse {
        bins: metrics::probability_flip_bins(&req.scores, &req.unstable, req.n_bins)?,
        curve: metrics::uncertainty_threshold_curve(&u, &req.unstable, &metrics::default_thresholds(req.n_thresholds))?,
    })
}

pub fn analyze(req: &AnalyzeRequest) -> Result<StabilityReport, ApiError> {
    // stored predictions stand in for the data file
    let v = validate_config(&req.config, false)?;
    Ok(report::analyze(&v.config, &req.predictions)?)
}

pub fn bounds_check(req: &ConfigRequest) -> Result<BoundsCheckReport, ApiError> {
    let v = valid(&req.config)?;
    let p = prepare(&v.config)?;
    Ok(run_bounds_check(&v.config, &p, req.threads)?)
}

pub fn run_experiment(req: &ExperimentRequest) -> Result<ExperimentResult, ApiError> {
    let v = if req.stage == RunStage::Analyze { validate_config(&req.config, false)? } else { valid(&req.config)? };
    let c = &v.config;
    match req.stage {
        RunStage::Ingest => Ok(ExperimentResult { dataset: prepare(c)?.summary(), predictions: None, report: None }),
        RunStage::Train => {
            let t = std::time::Instant::now();
            let p = prepare(c)?;
            let mut preds = pipeline::compute_predictions(c, &p, req.threads)?;
            preds.timing = Some(pipeline::Timing {
                prepare_seconds: 0.0,
                train_seconds: t.elapsed().as_secs_f64(),
                analyze_seconds: 0.0,
                threads: req.threads,
            });
            Ok(ExperimentResult { dataset: p.summary(), predictions: Some(preds), report: None })
        }
        RunStage::Analyze => {
            let preds = req
                .predictions
                .as_ref()
                .ok_or_else(|| ApiError::bad_request("the analyze stage needs stored predictions"))?;
            let report = report::analyze(c, preds)?;
            Ok(ExperimentResult { dataset: preds.dataset.clone(), predictions: None, report: Some(report) })
        }
        RunStage::All => {
            let (report, preds) = pipeline::run_experiment(c, req.threads)?;
            Ok(ExperimentResult { dataset: preds.dataset.clone(), predictions: Some(preds), report: Some(report) })
        }
    }
}

impl From<TrainError> for ApiError {
    fn from(e: TrainError) -> Self {
        ApiError::failed(Some(Stage::Train), e.to_string())
    }
}
