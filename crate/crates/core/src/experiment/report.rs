//! Analysis phase: a pure function of the config and the stored
//! predictions, so reports regenerate bit-identically without retraining.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Deployed, ExperimentConfig};
use super::pipeline::{anchor_data, model_key, AtStage, DataKey, ModelPrediction, PipelineError, Predictions, RunPredictions, Stage, Timing};
use crate::bounds::{self, BoundReport, StabilityParams};
use crate::dataset::RegimeKind;
use crate::metrics::{
    self, CommonArbitrariness, CurvePoint, Discrepancy, FlipBin, MetricsError, PredictionMatrix, SmoothChurnParams,
};
use crate::rashomon::{decide_membership, Metric, MEMBERSHIP_TOLERANCE};
use crate::trainer::{pointwise_uncertainty, threshold, ModelClass};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Per-repetition values with their pooled mean and dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across repetitions (0 for one value).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { values, mean, std, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothChurn {
    pub gamma: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    /// Model key of the deployed model anchoring the set.
    pub anchor: String,
    pub metric: Metric,
    pub epsilon: f64,
    pub baseline_metric: f64,
    pub evaluated: usize,
    pub members: Vec<String>,
    pub rejected: Vec<String>,
    pub acceptance_rate: f64,
    pub ambiguity: f64,
    pub baseline_ambiguity: f64,
    pub discrepancy: Discrepancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableLists {
    /// Test sample ids whose prediction varies within the set.
    pub rashomon_unstable: Vec<String>,
    /// Test sample ids whose prediction changes from A to B.
    pub churn_unstable: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeResult {
    pub regime: RegimeKind,
    pub experiment: String,
    pub model_a: String,
    pub model_b: String,
    pub n_train_a: usize,
    pub n_train_b: usize,
    pub churn: f64,
    pub signed_loss_churn: f64,
    pub smooth_churn: Vec<SmoothChurn>,
    pub error_a: f64,
    pub error_b: f64,
    pub auc_a: Option<f64>,
    pub rashomon: SetSummary,
    pub unstable: UnstableLists,
    pub common_arbitrariness: CommonArbitrariness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub class: ModelClass,
    pub repetition: usize,
    pub default_seed: u64,
    pub error_b: f64,
    pub auc_b: Option<f64>,
    pub regimes: Vec<RegimeResult>,
}

impl RunReport {
    pub fn regime(&self, kind: RegimeKind) -> Option<&RegimeResult> {
        self.regimes.iter().find(|r| r.regime == kind)
    }
}

/// Table 1 layout: multiplicity, churn per regime and AUC of model B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub multiplicity_regime: RegimeKind,
    pub ambiguity: Summary,
    pub discrepancy: Summary,
    pub churn: BTreeMap<String, Summary>,
    pub auc: Option<Summary>,
    pub error: Summary,
}

/// Table 2 layout: common arbitrariness per regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    pub common_arbitrariness: BTreeMap<String, Summary>,
    /// Repetitions where the churn unstable set was empty.
    pub empty_churn_sets: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBlock {
    pub class: ModelClass,
    pub table1: Table1,
    pub table2: Table2,
    pub runs: Vec<RunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotBlock {
    pub class: ModelClass,
    /// `multiplicity`, `large_update` or `small_update`.
    pub experiment: String,
    /// Whose scores are binned: the deployed model (multiplicity) or model A.
    pub reference: String,
    pub points: usize,
    pub unstable: usize,
    pub bins: Vec<FlipBin>,
    pub curve: Vec<CurvePoint>,
    pub bins_file: String,
    pub curve_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsBlock {
    pub checks: Vec<BoundReport>,
    pub hard_violations: usize,
    /// Conditional checks whose premise failed on the test sample.
    pub preconditions_unmet: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub dataset: super::pipeline::DatasetSummary,
    pub assumptions: BTreeMap<String, String>,
    pub classes: Vec<ClassBlock>,
    pub plots: Vec<PlotBlock>,
    pub bounds: BoundsBlock,
    pub skipped: Vec<Skipped>,
    /// SHA-256 of the report with this field empty and `timing` unset.
    pub report_hash: String,
    #[serde(default)]
    pub timing: Option<Timing>,
}

impl StabilityReport {
    pub fn class(&self, class: ModelClass) -> Option<&ClassBlock> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn compute_hash(&self) -> String {
        let mut r = self.clone();
        r.report_hash = String::new();
        r.timing = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&r).expect("report serializes")))
    }

    pub fn has_hard_violation(&self) -> bool {
        self.bounds.hard_violations > 0
    }
}

// --- analysis ---------------------------------------------------------------

fn lookup<'a>(run: &'a RunPredictions, key: &str) -> Result<&'a ModelPrediction, PipelineError> {
    run.models.get(key).ok_or_else(|| {
        PipelineError::new(
            Stage::Analyze,
            format!("predictions lack model {key} ({} rep {})", run.class.name(), run.repetition),
        )
    })
}

fn labels(scores: &[f64]) -> Vec<u8> {
    scores.iter().map(|&p| threshold(p)).collect()
}

fn error(scores: &[f64], y: &[u8]) -> f64 {
    scores.iter().zip(y).filter(|(&p, &t)| threshold(p) != t).count() as f64 / y.len() as f64
}

fn auc_or_none(scores: &[f64], y: &[u8]) -> Result<Option<f64>, PipelineError> {
    match metrics::auc(scores, y) {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::SingleClass) => Ok(None),
        Err(e) => Err(PipelineError::new(Stage::Analyze, e)),
    }
}

fn ctx(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect()
}

struct Analysis<'a> {
    config: &'a ExperimentConfig,
    preds: &'a Predictions,
    checks: Vec<BoundReport>,
    skipped: Vec<Skipped>,
}

impl Analysis<'_> {
    fn ids(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.preds.test_ids[i].clone()).collect()
    }

    fn regime(&mut self, run: &RunPredictions, kind: RegimeKind) -> Result<RegimeResult, PipelineError> {
        let cfg = self.config;
        let y = &self.preds.y_test;
        let s0 = run.default_seed;
        let key_a = model_key(DataKey::Regime(kind), s0);
        let key_b = model_key(DataKey::Full, s0);
        let a = lookup(run, &key_a)?;
        let b = lookup(run, &key_b)?;
        let (la, lb) = (labels(&a.scores), labels(&b.scores));
        let churn = metrics::churn(&la, &lb).at(Stage::Analyze)?;
        let signed = metrics::signed_loss_churn(&a.scores, &b.scores, y).at(Stage::Analyze)?;
        let mut smooth = Vec::new();
        for &g in &cfg.experiment.smooth_churn_gammas {
            let p = SmoothChurnParams::new(g).at(Stage::Analyze)?;
            smooth.push(SmoothChurn { gamma: g, value: metrics::smooth_churn(&a.scores, &b.scores, y, p).at(Stage::Analyze)? });
        }
        let (error_a, error_b) = (error(&a.scores, y), error(&b.scores, y));
        let label = format!("{} rep {} {}", run.class.name(), run.repetition, kind.name());

        let lemma = bounds::check_bound(
            churn,
            bounds::churn_sum_bound(error_a, error_b),
            "churn_sum",
            ctx(&[("run", label.clone()), ("model_a", key_a.clone()), ("model_b", key_b.clone()), ("sample", "test".into())]),
        );
        self.checks.push(lemma);

        // Rashomon set around the deployed model
        let anchor = anchor_data(cfg, kind);
        let anchor_key = model_key(anchor, s0);
        let base = lookup(run, &anchor_key)?;
        let rs = cfg.rashomon.resolve();
        let base_value = match rs.metric {
            Metric::LossGap => base.train_loss,
            _ => base.train_error,
        };
        let reference = rs.metric.is_relative().then_some(base_value);
        let mut rows = vec![base.scores.clone()];
        let mut ids = vec![anchor_key.clone()];
        let (mut members, mut rejected) = (vec![anchor_key.clone()], Vec::new());
        let base_error = error(&base.scores, y);
        for &s in &rs.seeds {
            let key = model_key(anchor, s);
            let m = lookup(run, &key)?;
            let value = match rs.metric {
                Metric::LossGap => m.train_loss,
                _ => m.train_error,
            };
            if !decide_membership(value, reference, rs.epsilon).member {
                if s != s0 {
                    rejected.push(key);
                }
                continue;
            }
            if s != s0 {
                rows.push(m.scores.clone());
                ids.push(key.clone());
                members.push(key.clone());
            }
            // corollary, same test sample for risks and churn
            let member_error = error(&m.scores, y);
            let mut rep = bounds::check_bound(
                metrics::churn(&labels(&base.scores), &labels(&m.scores)).at(Stage::Analyze)?,
                bounds::rashomon_churn_bound(base_error, rs.epsilon),
                "rashomon_churn",
                ctx(&[("run", label.clone()), ("baseline", anchor_key.clone()), ("member", key.clone()), ("sample", "test".into())]),
            );
            rep.precondition_met = Some(member_error <= base_error + rs.epsilon + MEMBERSHIP_TOLERANCE);
            self.checks.push(rep);
        }
        let evaluated = rs.seeds.len() + usize::from(!rs.seeds.contains(&s0));
        let pm = PredictionMatrix::new(rows, self.preds.test_ids.clone(), ids).at(Stage::Analyze)?;
        let u_r = metrics::rashomon_unstable_set(&pm);
        let u_c = metrics::churn_unstable_set(&la, &lb).at(Stage::Analyze)?;
        let set = SetSummary {
            anchor: anchor_key,
            metric: rs.metric,
            epsilon: rs.epsilon,
            baseline_metric: base_value,
            evaluated,
            acceptance_rate: members.len() as f64 / evaluated as f64,
            members,
            rejected,
            ambiguity: metrics::empirical_ambiguity(&pm).at(Stage::Analyze)?,
            baseline_ambiguity: metrics::baseline_ambiguity(&pm, 0).at(Stage::Analyze)?,
            discrepancy: metrics::discrepancy(&pm, 0).at(Stage::Analyze)?,
        };

        if let Some(beta) = cfg.bounds.beta {
            let gamma = cfg.bounds.gamma;
            let params = StabilityParams { beta, n: b.n_train as u64, gamma, epsilon: rs.epsilon };
            let analytic = bounds::expected_smooth_churn_bound(&params).at(Stage::Bounds)?;
            let measured = metrics::smooth_churn(&a.scores, &b.scores, y, SmoothChurnParams::new(gamma).at(Stage::Bounds)?)
                .at(Stage::Bounds)?;
            let mut rep = bounds::check_bound(
                measured,
                analytic,
                "expected_smooth_churn",
                ctx(&[("run", label), ("beta", beta.to_string()), ("n", b.n_train.to_string()), ("gamma", gamma.to_string())]),
            );
            rep.exact = false;
            self.checks.push(rep);
        }

        Ok(RegimeResult {
            regime: kind,
            experiment: kind.name().into(),
            model_a: key_a,
            model_b: key_b,
            n_train_a: a.n_train,
            n_train_b: b.n_train,
            churn,
            signed_loss_churn: signed,
            smooth_churn: smooth,
            error_a,
            error_b,
            auc_a: auc_or_none(&a.scores, y)?,
            unstable: UnstableLists { rashomon_unstable: self.ids(&u_r), churn_unstable: self.ids(&u_c) },
            common_arbitrariness: metrics::common_arbitrariness(&u_r, &u_c),
            rashomon: set,
        })
    }

    fn run(&mut self, run: &RunPredictions) -> Result<RunReport, PipelineError> {
        let b = lookup(run, &model_key(DataKey::Full, run.default_seed))?;
        let y = &self.preds.y_test;
        let mut regimes = Vec::new();
        for spec in &self.config.experiment.regimes {
            regimes.push(self.regime(run, spec.kind)?);
        }
        Ok(RunReport {
            class: run.class,
            repetition: run.repetition,
            default_seed: run.default_seed,
            error_b: error(&b.scores, y),
            auc_b: auc_or_none(&b.scores, y)?,
            regimes,
        })
    }

    fn plots(&self, class: ModelClass, runs: &[RunReport], preds: &[&RunPredictions]) -> Result<Vec<PlotBlock>, PipelineError> {
        let cfg = self.config;
        let index: BTreeMap<&str, usize> = self.preds.test_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let thresholds = metrics::default_thresholds(cfg.experiment.n_thresholds);
        let mut experiments: Vec<(String, RegimeKind, bool)> =
            vec![("multiplicity".into(), cfg.experiment.multiplicity_regime, true)];
        experiments.extend(cfg.experiment.regimes.iter().map(|r| (r.kind.name().to_owned(), r.kind, false)));
        let mut out = Vec::new();
        for (name, kind, multiplicity) in experiments {
            // pool all repetitions into one sample
            let (mut scores, mut unstable) = (Vec::new(), Vec::new());
            for (rr, rp) in runs.iter().zip(preds) {
                let Some(reg) = rr.regime(kind) else { continue };
                let (key, ids) = if multiplicity {
                    (&reg.rashomon.anchor, &reg.unstable.rashomon_unstable)
                } else {
                    (&reg.model_a, &reg.unstable.churn_unstable)
                };
                let offset = scores.len();
                scores.extend_from_slice(&lookup(rp, key)?.scores);
                unstable.extend(ids.iter().map(|id| offset + index[id.as_str()]));
            }
            let uncertainty: Vec<f64> = scores.iter().map(|&p| pointwise_uncertainty(p)).collect();
            let bins = metrics::probability_flip_bins(&scores, &unstable, cfg.experiment.n_bins).at(Stage::Analyze)?;
            let curve = metrics::uncertainty_threshold_curve(&uncertainty, &unstable, &thresholds).at(Stage::Analyze)?;
            out.push(PlotBlock {
                class,
                reference: if multiplicity { "deployed".into() } else { "model_a".into() },
                points: scores.len(),
                unstable: unstable.len(),
                bins,
                curve,
                bins_file: format!("prob_flip_bins_{}_{name}.csv", class.name()),
                curve_file: format!("uncertainty_curve_{}_{name}.csv", class.name()),
                experiment: name,
            });
        }
        Ok(out)
    }
}

fn class_block(class: ModelClass, cfg: &ExperimentConfig, runs: Vec<RunReport>) -> ClassBlock {
    let mk = cfg.experiment.multiplicity_regime;
    let pick = |f: &dyn Fn(&RunReport) -> Option<f64>| Summary::new(runs.iter().filter_map(f).collect());
    let per_regime = |f: &dyn Fn(&RegimeResult) -> f64| -> BTreeMap<String, Summary> {
        cfg.experiment
            .regimes
            .iter()
            .map(|s| (s.kind.name().to_owned(), pick(&|r| r.regime(s.kind).map(f))))
            .collect()
    };
    let aucs: Vec<f64> = runs.iter().filter_map(|r| r.auc_b).collect();
    let table1 = Table1 {
        multiplicity_regime: mk,
        ambiguity: pick(&|r| r.regime(mk).map(|g| g.rashomon.ambiguity)),
        discrepancy: pick(&|r| r.regime(mk).map(|g| g.rashomon.discrepancy.value)),
        churn: per_regime(&|g| g.churn),
        auc: (!aucs.is_empty()).then(|| Summary::new(aucs)),
        error: pick(&|r| Some(r.error_b)),
    };
    let table2 = Table2 {
        common_arbitrariness: per_regime(&|g| g.common_arbitrariness.value),
        empty_churn_sets: cfg
            .experiment
            .regimes
            .iter()
            .map(|s| {
                let n = runs
                    .iter()
                    .filter(|r| r.regime(s.kind).is_some_and(|g| g.common_arbitrariness.empty_denominator))
                    .count();
                (s.kind.name().to_owned(), n)
            })
            .collect(),
    };
    ClassBlock { class, table1, table2, runs }
}

/// Compute every metric and bound check from stored predictions.
pub fn analyze(config: &ExperimentConfig, preds: &Predictions) -> Result<StabilityReport, PipelineError> {
    if preds.config_hash != config.hash() {
        tracing::warn!("predictions were computed under a different config hash");
    }
    let mut an = Analysis { config, preds, checks: Vec::new(), skipped: Vec::new() };
    let mut classes = Vec::new();
    let mut plots = Vec::new();
    for &class in &config.experiment.model_classes {
        let runs_in: Vec<&RunPredictions> = preds.runs.iter().filter(|r| r.class == class).collect();
        if runs_in.is_empty() {
            an.skipped.push(Skipped { field: format!("classes.{}", class.name()), reason: "no predictions for this class".into() });
            continue;
        }
        let mut runs = Vec::new();
        for r in &runs_in {
            runs.push(an.run(r)?);
        }
        if runs.iter().any(|r| r.auc_b.is_none()) {
            an.skipped.push(Skipped {
                field: format!("classes.{}.table1.auc", class.name()),
                reason: "test sample holds a single class in some repetition".into(),
            });
        }
        plots.extend(an.plots(class, &runs, &runs_in)?);
        classes.push(class_block(class, config, runs));
    }
    if config.bounds.beta.is_none() {
        an.skipped.push(Skipped {
            field: "bounds.expected_smooth_churn".into(),
            reason: "bounds.beta unset; estimate it with bounds-check and set it to enable this check".into(),
        });
    }
    if config.experiment.deployed == Deployed::ModelB {
        an.skipped.push(Skipped {
            field: "plots.multiplicity".into(),
            reason: "sets are anchored at model B, so both regimes share one set".into(),
        });
    }
    let checks = std::mem::take(&mut an.checks);
    let bounds = BoundsBlock {
        hard_violations: checks.iter().filter(|c| c.is_hard_violation()).count(),
        preconditions_unmet: checks.iter().filter(|c| c.precondition_met == Some(false)).count(),
        checks,
    };
    let mut report = StabilityReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: config.hash(),
        dataset: preds.dataset.clone(),
        assumptions: config.assumptions(),
        classes,
        plots,
        bounds,
        skipped: an.skipped,
        report_hash: String::new(),
        timing: None,
    };
    report.report_hash = report.compute_hash();
    Ok(report)
}

// --- output -----------------------------------------------------------------

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::new(Stage::Report, std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).at(Stage::Report)?;
    for r in rows {
        w.write_record(&r).at(Stage::Report)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::new(Stage::Report, e.to_string()))?;
    fs::write(path, bytes).map_err(io(path))
}

/// Write one bin file and one curve file per plot block.
pub fn emit_plot_data(report: &StabilityReport, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut files = Vec::new();
    for p in &report.plots {
        let path = out_dir.join(&p.bins_file);
        write_csv(
            &path,
            &["bin_lo", "bin_hi", "count", "flip_proportion", "empty"],
            p.bins.iter().map(|b| {
                vec![b.lo.to_string(), b.hi.to_string(), b.count.to_string(), b.flip_proportion.to_string(), b.empty.to_string()]
            }),
        )?;
        files.push(path);
        let path = out_dir.join(&p.curve_file);
        write_csv(
            &path,
            &["threshold", "proportion", "experiment", "undefined"],
            p.curve.iter().map(|c| {
                vec![c.threshold.to_string(), c.proportion.to_string(), p.experiment.clone(), c.undefined.to_string()]
            }),
        )?;
        files.push(path);
    }
    Ok(files)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).at(Stage::Report)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io(path))
}

pub fn read_predictions(path: &Path) -> Result<Predictions, PipelineError> {
    let bytes = fs::read(path).map_err(io(path))?;
    let p: Predictions = serde_json::from_slice(&bytes).at(Stage::Analyze)?;
    if p.format_version != super::pipeline::PREDICTIONS_FORMAT_VERSION {
        return Err(PipelineError::new(Stage::Analyze, format!("unsupported predictions format {}", p.format_version)));
    }
    Ok(p)
}

pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const CONFIG_FILE: &str = "config.resolved.json";

/// Write the report, predictions, resolved config and plot files.
pub fn write_outputs(
    config: &ExperimentConfig,
    report: &StabilityReport,
    preds: Option<&Predictions>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut files = Vec::new();
    let path = out_dir.join(REPORT_FILE);
    write_json(report, &path)?;
    files.push(path);
    if let Some(p) = preds {
        let path = out_dir.join(PREDICTIONS_FILE);
        write_json(p, &path)?;
        files.push(path);
    }
    let path = out_dir.join(CONFIG_FILE);
    write_json(config, &path)?;
    files.push(path);
    files.extend(emit_plot_data(report, &out_dir.join("plots"))?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = Summary::new(vec![1.0, 2.0, 3.0]);
        assert_eq!((s.mean, s.std, s.min, s.max), (2.0, 1.0, 1.0, 3.0));
        assert_eq!(Summary::new(vec![0.5]).std, 0.0);
    }
}
