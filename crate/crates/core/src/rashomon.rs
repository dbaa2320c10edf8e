//! ε-Rashomon sets: membership filtering against a baseline or an absolute
//! threshold, randomized retraining across seeds, and constrained candidate
//! models for logistic regression.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::jobs::run_keyed;
use crate::linalg::{logit, sigmoid};
use crate::trainer::io::{self as model_io, ModelIoError};
use crate::trainer::newton::{newton_minimize, LogisticObjective, LogitPenalty, Side};
use crate::trainer::{error_rate, mean_log_loss, train, Arch, Classifier, Model, Network, Optimizer, TrainConfig, TrainError};

/// Slack on the membership inequality so boundary cases computed with
/// different rounding stay inclusive.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Five arrays of five seeds; the first seed of each array is that
/// repetition's default seed.
pub const DEFAULT_SEED_ARRAYS: [[u64; 5]; 5] = [
    [0, 1, 109, 10, 1234],
    [3666, 2299, 2724, 1262, 4220],
    [3971, 9444, 1375, 7351, 2083],
    [1429, 2281, 2189, 9376, 2261],
    [1881, 2273, 9509, 6707, 4412],
];

pub fn default_seeds() -> Vec<u64> {
    DEFAULT_SEED_ARRAYS.iter().flatten().copied().collect()
}

#[derive(Debug, Error)]
pub enum RashomonError {
    #[error("no model satisfied the membership inequality ({evaluated} evaluated); epsilon may be too small")]
    EmptyRashomonSet { evaluated: usize },
    #[error("metric {0:?} is baseline-relative but no baseline was given")]
    MissingBaseline(Metric),
    #[error("invalid rashomon config: {0}")]
    InvalidConfig(String),
    #[error("constrained candidates need a logistic regression baseline")]
    NotLogistic,
    #[error("member {id} no longer satisfies membership after reload")]
    MembershipMismatch { id: String },
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RashomonError + '_ {
    move |source| RashomonError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean training cross-entropy, relative to the baseline.
    LossGap,
    /// Zero-one error, relative to the baseline.
    AccuracyErrorGap,
    /// Zero-one error against an absolute threshold.
    AbsoluteAccuracyError,
}

impl Metric {
    pub fn is_relative(self) -> bool {
        !matches!(self, Metric::AbsoluteAccuracyError)
    }

    pub fn evaluate(self, model: &Model, data: &Dataset, indices: &[usize]) -> f64 {
        match self {
            Metric::LossGap => mean_log_loss(model, data, indices),
            Metric::AccuracyErrorGap | Metric::AbsoluteAccuracyError => error_rate(model, data, indices),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_metric() -> Metric {
    Metric::LossGap
}

impl Default for RashomonConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, metric: Metric::LossGap, seeds: default_seeds() }
    }
}

impl RashomonConfig {
    pub fn m(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<(), RashomonError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(RashomonError::InvalidConfig("epsilon must be >= 0".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(RashomonError::InvalidConfig("seeds must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub value: f64,
    /// Baseline metric for relative metrics.
    pub reference: Option<f64>,
    /// `value − reference` (relative) or `value` (absolute).
    pub gap: f64,
}

/// Test `M(h) ≤ M(h₀) + ε` (relative metrics) or `M(h) ≤ ε` (absolute).
pub fn membership(
    model: &Model,
    baseline: Option<&Model>,
    epsilon: f64,
    metric: Metric,
    data: &Dataset,
    indices: &[usize],
) -> Result<Membership, RashomonError> {
    let value = metric.evaluate(model, data, indices);
    let reference = match (metric.is_relative(), baseline) {
        (true, Some(b)) => Some(metric.evaluate(b, data, indices)),
        (true, None) => return Err(RashomonError::MissingBaseline(metric)),
        (false, _) => None,
    };
    Ok(decide_membership(value, reference, epsilon))
}

/// Membership decision from an already evaluated metric value.
pub fn decide_membership(value: f64, reference: Option<f64>, epsilon: f64) -> Membership {
    let limit = reference.unwrap_or(0.0) + epsilon;
    Membership {
        member: value <= limit + MEMBERSHIP_TOLERANCE,
        value,
        reference,
        gap: value - reference.unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Randomized,
    ConstrainedCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Seed { seed: u64 },
    Candidate { target: usize, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub origin: Origin,
    pub metric_value: f64,
    pub gap: f64,
    #[serde(skip)]
    pub model: Option<Model>,
}

impl Member {
    pub fn model(&self) -> &Model {
        self.model.as_ref().expect("member model loaded")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub id: String,
    pub origin: Origin,
    pub reason: String,
    pub metric_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonSet {
    pub construction: Construction,
    pub config: RashomonConfig,
    /// Stored apart from `members`; prediction matrices put it in row 0.
    #[serde(skip)]
    pub baseline: Option<Model>,
    pub baseline_metric: Option<f64>,
    pub members: Vec<Member>,
    pub rejected: Vec<Rejected>,
}

impl RashomonSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let total = self.members.len() + self.rejected.len();
        if total == 0 { 0.0 } else { self.members.len() as f64 / total as f64 }
    }

    /// Re-run the membership test of every member.
    pub fn verify(&self, data: &Dataset, indices: &[usize]) -> Result<(), RashomonError> {
        if self.construction == Construction::ConstrainedCandidate {
            // candidates are tested on the penalized training objective
            return Ok(());
        }
        for m in &self.members {
            let v = membership(m.model(), self.baseline.as_ref(), self.config.epsilon, self.config.metric, data, indices)?;
            if !v.member {
                return Err(RashomonError::MembershipMismatch { id: m.id.clone() });
            }
        }
        Ok(())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), RashomonError> {
        let members_dir = dir.join("members");
        fs::create_dir_all(&members_dir).map_err(io_err(&members_dir))?;
        let manifest = Manifest { format_version: MANIFEST_VERSION, has_baseline: self.baseline.is_some(), set: self.clone() };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
        if let Some(b) = &self.baseline {
            model_io::save(b, &dir.join("baseline.json"))?;
        }
        for m in &self.members {
            model_io::save(m.model(), &members_dir.join(format!("{}.json", m.id)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, RashomonError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(RashomonError::InvalidConfig(format!("unsupported manifest version {}", manifest.format_version)));
        }
        let mut set = manifest.set;
        if manifest.has_baseline {
            set.baseline = Some(model_io::load(&dir.join("baseline.json"))?);
        }
        for m in &mut set.members {
            m.model = Some(model_io::load(&dir.join("members").join(format!("{}.json", m.id)))?);
        }
        Ok(set)
    }
}

/// A set with its models inlined, for transport as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonBundle {
    pub set: RashomonSet,
    pub baseline: Option<Model>,
    pub models: BTreeMap<String, Model>,
}

impl From<RashomonSet> for RashomonBundle {
    fn from(mut set: RashomonSet) -> Self {
        let baseline = set.baseline.take();
        let models = set.members.iter_mut().filter_map(|m| Some((m.id.clone(), m.model.take()?))).collect();
        Self { set, baseline, models }
    }
}

impl RashomonBundle {
    pub fn into_set(mut self) -> Result<RashomonSet, RashomonError> {
        self.set.baseline = self.baseline;
        for m in &mut self.set.members {
            m.model = Some(self.models.remove(&m.id).ok_or_else(|| RashomonError::InvalidConfig(format!("bundle lacks model {}", m.id)))?);
        }
        Ok(self.set)
    }
}

const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    has_baseline: bool,
    #[serde(flatten)]
    set: RashomonSet,
}

/// `h₀`: the trainer run with the configured (default) seed.
pub fn fit_baseline(data: &Dataset, train_indices: &[usize], config: &TrainConfig) -> Result<Classifier, TrainError> {
    train(data, train_indices, config)
}

/// Filter already-trained seed models into a set. `trained` must be sorted
/// by seed for a deterministic member order.
pub fn assemble_randomized(
    trained: Vec<(u64, Model)>,
    baseline: Option<Model>,
    config: &RashomonConfig,
    data: &Dataset,
    indices: &[usize],
) -> Result<RashomonSet, RashomonError> {
    config.validate()?;
    let reference = match (config.metric.is_relative(), &baseline) {
        (true, Some(b)) => Some(config.metric.evaluate(b, data, indices)),
        (true, None) => return Err(RashomonError::MissingBaseline(config.metric)),
        (false, _) => None,
    };
    let evaluated = trained.len();
    let mut members = Vec::new();
    let mut rejected = Vec::new();
    for (seed, model) in trained {
        let value = config.metric.evaluate(&model, data, indices);
        let v = decide_membership(value, reference, config.epsilon);
        let id = format!("seed_{seed}");
        if v.member {
            members.push(Member { id, origin: Origin::Seed { seed }, metric_value: value, gap: v.gap, model: Some(model) });
        } else {
            rejected.push(Rejected {
                id,
                origin: Origin::Seed { seed },
                reason: format!("gap {:.6} exceeds epsilon {}", v.gap, config.epsilon),
                metric_value: value,
            });
        }
    }
    if members.is_empty() {
        return Err(RashomonError::EmptyRashomonSet { evaluated });
    }
    Ok(RashomonSet {
        construction: Construction::Randomized,
        config: config.clone(),
        baseline,
        baseline_metric: reference,
        members,
        rejected,
    })
}

/// Train one model per seed with `fit(seed)` and keep those satisfying the
/// membership inequality on `data[indices]`.
pub fn empirical_rashomon<F>(
    data: &Dataset,
    indices: &[usize],
    config: &RashomonConfig,
    baseline: Option<Model>,
    fit: F,
) -> Result<RashomonSet, RashomonError>
where
    F: Fn(u64) -> Result<Model, TrainError> + Sync,
{
    config.validate()?;
    if config.seeds.is_empty() {
        return Err(RashomonError::InvalidConfig("at least one seed is required".into()));
    }
    let trained = run_keyed(config.seeds.clone(), |&s| fit(s))?;
    assemble_randomized(trained, baseline, config, data, indices)
}

// --- constrained candidates -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGridConfig {
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Explicit targets; when empty, the `target_count` points of the
    /// selection pool whose baseline score is nearest 0.5.
    #[serde(default)]
    pub target_examples: Vec<usize>,
    #[serde(default = "default_target_count")]
    pub target_count: usize,
    #[serde(default = "default_schedule")]
    pub penalty_schedule: Vec<f64>,
    #[serde(default = "default_constraint_tolerance")]
    pub constraint_tolerance: f64,
}

fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| (5 + 10 * k) as f64 / 100.0).collect()
}
fn default_target_count() -> usize {
    50
}
/// Doubling from 10, capped by a final 10⁴.
pub fn default_schedule() -> Vec<f64> {
    let mut s: Vec<f64> = (0..10).map(|k| 10.0 * f64::from(1u32 << k)).collect();
    s.push(1e4);
    s
}
fn default_constraint_tolerance() -> f64 {
    1e-3
}

impl Default for CandidateGridConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            target_examples: Vec::new(),
            target_count: default_target_count(),
            penalty_schedule: default_schedule(),
            constraint_tolerance: default_constraint_tolerance(),
        }
    }
}

impl CandidateGridConfig {
    pub fn validate(&self) -> Result<(), RashomonError> {
        let bad = |m: &str| Err(RashomonError::InvalidConfig(m.to_owned()));
        if self.thresholds.is_empty() {
            return bad("thresholds must be non-empty");
        }
        if self.thresholds.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return bad("thresholds must lie strictly inside (0, 1)");
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("thresholds must be sorted and distinct");
        }
        if self.penalty_schedule.is_empty() || self.penalty_schedule.iter().any(|&m| !(m > 0.0)) {
            return bad("penalty_schedule must be non-empty and positive");
        }
        if !(self.constraint_tolerance > 0.0) {
            return bad("constraint_tolerance must be > 0");
        }
        Ok(())
    }
}

/// The `count` indices of `pool` whose baseline score is nearest 0.5,
/// ties broken by index; returned sorted.
pub fn nearest_to_half(model: &Model, data: &Dataset, pool: &[usize], count: usize) -> Vec<usize> {
    let scores = model.scores_at(data, pool);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| (scores[a] - 0.5).abs().total_cmp(&(scores[b] - 0.5).abs()).then(pool[a].cmp(&pool[b])));
    let mut out: Vec<usize> = order.into_iter().take(count).map(|k| pool[k]).collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolve {
    pub target: usize,
    pub threshold: f64,
    pub objective: f64,
    pub probability: f64,
    pub violation: f64,
    pub mu: f64,
    pub feasible: bool,
}

/// Constrained ERM for one (target, threshold) pair by a quadratic penalty
/// on the target's logit, warm-started from the baseline weights and
/// solved by Newton for each weight in the schedule.
pub fn solve_candidate(
    data: &Dataset,
    train_indices: &[usize],
    baseline_w: &Array1<f64>,
    l2: f64,
    target: usize,
    threshold: f64,
    grid: &CandidateGridConfig,
) -> (Array1<f64>, CandidateSolve) {
    let x = data.x.select(Axis(0), train_indices);
    let y: Vec<f64> = train_indices.iter().map(|&i| f64::from(data.y[i])).collect();
    let point = data.x.row(target).to_owned();
    let p0 = sigmoid(point.dot(baseline_w));
    let side = if threshold < p0 { Side::Upper } else { Side::Lower };
    let prob_violation = |w: &Array1<f64>| {
        let p = sigmoid(point.dot(w));
        match side {
            Side::Upper => (p - threshold).max(0.0),
            Side::Lower => (threshold - p).max(0.0),
        }
    };
    let mut obj = LogisticObjective { x: x.view(), y: &y, l2, penalty: None };
    let mut w = baseline_w.clone();
    let mut mu_used = 0.0;
    if prob_violation(&w) > 0.0 {
        for &mu in &grid.penalty_schedule {
            obj.penalty = Some(LogitPenalty { point: point.clone(), bound: logit(threshold), side, mu });
            w = newton_minimize(&obj, w, 1e-9, 100).w;
            mu_used = mu;
            if prob_violation(&w) <= grid.constraint_tolerance {
                break;
            }
        }
    }
    obj.penalty = None;
    let violation = prob_violation(&w);
    let solve = CandidateSolve {
        target,
        threshold,
        objective: obj.value(w.view()),
        probability: sigmoid(point.dot(&w)),
        violation,
        mu: mu_used,
        feasible: violation <= grid.constraint_tolerance,
    };
    (w, solve)
}

/// Candidate-model construction around a logistic regression baseline.
/// Infeasible constraints are recorded per candidate in `rejected`.
pub fn constrained_candidates(
    data: &Dataset,
    train_indices: &[usize],
    baseline: &Classifier,
    l2: f64,
    targets: &[usize],
    grid: &CandidateGridConfig,
    epsilon: f64,
) -> Result<RashomonSet, RashomonError> {
    grid.validate()?;
    if baseline.arch() != Arch::LogisticRegression {
        return Err(RashomonError::NotLogistic);
    }
    let w0 = Array1::from(baseline.network.params.clone());
    let base_obj = {
        let x = data.x.select(Axis(0), train_indices);
        let y: Vec<f64> = train_indices.iter().map(|&i| f64::from(data.y[i])).collect();
        LogisticObjective { x: x.view(), y: &y, l2, penalty: None }.value(w0.view())
    };
    let keys: Vec<(usize, usize)> =
        targets.iter().flat_map(|&t| (0..grid.thresholds.len()).map(move |k| (t, k))).collect();
    let solved = run_keyed::<_, _, RashomonError, _>(keys, |&(t, k)| {
        Ok(solve_candidate(data, train_indices, &w0, l2, t, grid.thresholds[k], grid))
    })?;
    let mut members = Vec::new();
    let mut rejected = Vec::new();
    let evaluated = solved.len();
    for ((t, k), (w, s)) in solved {
        let id = format!("cand_{t}_{k}");
        let origin = Origin::Candidate { target: t, threshold: grid.thresholds[k] };
        let gap = s.objective - base_obj;
        if !s.feasible {
            rejected.push(Rejected {
                id,
                origin,
                reason: format!("constraint infeasible: violation {:.3e} after mu {}", s.violation, s.mu),
                metric_value: s.objective,
            });
        } else if gap > epsilon + MEMBERSHIP_TOLERANCE {
            rejected.push(Rejected {
                id,
                origin,
                reason: format!("loss gap {gap:.6} exceeds epsilon {epsilon}"),
                metric_value: s.objective,
            });
        } else {
            let net = Network { arch: Arch::LogisticRegression, input_dim: w.len(), params: w.to_vec() };
            let model = Model::Plain(Classifier { network: net, calibration: None });
            members.push(Member { id, origin, metric_value: s.objective, gap, model: Some(model) });
        }
    }
    if members.is_empty() {
        return Err(RashomonError::EmptyRashomonSet { evaluated });
    }
    Ok(RashomonSet {
        construction: Construction::ConstrainedCandidate,
        config: RashomonConfig { epsilon, metric: Metric::LossGap, seeds: Vec::new() },
        baseline: Some(Model::Plain(baseline.clone())),
        baseline_metric: Some(base_obj),
        members,
        rejected,
    })
}

/// Baseline trainer config for candidate construction: exact Newton fit.
pub fn candidate_baseline_config(l2: f64) -> TrainConfig {
    TrainConfig { optimizer: Optimizer::Newton, l2_penalty: l2, ..TrainConfig::logistic() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use ndarray::Array2;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed, 0);
        let mut f = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a = rng.normal();
            let b = rng.normal();
            f[[i, 0]] = a;
            f[[i, 1]] = b;
            y.push(u8::from(rng.uniform() < sigmoid(1.5 * a - b)));
        }
        Dataset::from_features(f, y, "toy")
    }

    fn lr_fit(d: &Dataset, idx: &[usize]) -> impl Fn(u64) -> Result<Model, TrainError> + Sync {
        let d = d.clone();
        let idx = idx.to_vec();
        move |seed| {
            let cfg = TrainConfig { learning_rate: 0.02, epochs: 3, batch_size: 16, seed, ..TrainConfig::logistic() };
            Ok(Model::Plain(train(&d, &idx, &cfg)?))
        }
    }

    #[test]
    fn baseline_is_its_own_member() {
        let d = toy(200, 1);
        let idx: Vec<usize> = (0..200).collect();
        let b = Model::Plain(fit_baseline(&d, &idx, &TrainConfig::logistic().with_seed(0)).unwrap());
        let v = membership(&b, Some(&b), 0.0, Metric::LossGap, &d, &idx).unwrap();
        assert!(v.member && v.gap == 0.0);
    }

    #[test]
    fn accuracy_gap_boundary_is_inclusive() {
        assert!(decide_membership(0.13, Some(0.12), 0.01).member);
        assert!(!decide_membership(0.12 + 0.02, Some(0.12), 0.01).member);
        assert!(!decide_membership(0.5, Some(0.3), 0.1).member);
    }

    #[test]
    fn singleton_and_impossible_sets() {
        let d = toy(200, 2);
        let idx: Vec<usize> = (0..200).collect();
        let one = RashomonConfig { epsilon: 1.0, metric: Metric::AbsoluteAccuracyError, seeds: vec![7] };
        let s = empirical_rashomon(&d, &idx, &one, None, lr_fit(&d, &idx)).unwrap();
        assert_eq!(s.len(), 1);
        let zero = RashomonConfig { epsilon: 0.0, metric: Metric::AbsoluteAccuracyError, seeds: vec![1, 2, 3] };
        assert!(matches!(
            empirical_rashomon(&d, &idx, &zero, None, lr_fit(&d, &idx)),
            Err(RashomonError::EmptyRashomonSet { evaluated: 3 })
        ));
        let rel = RashomonConfig { epsilon: 0.1, metric: Metric::LossGap, seeds: vec![1] };
        assert!(matches!(
            empirical_rashomon(&d, &idx, &rel, None, lr_fit(&d, &idx)),
            Err(RashomonError::MissingBaseline(_))
        ));
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let c = RashomonConfig { seeds: vec![1, 1], ..Default::default() };
        assert!(c.validate().is_err());
        assert_eq!(RashomonConfig::default().m(), 25);
    }

    #[test]
    fn directory_round_trip_reverifies() {
        let d = toy(200, 3);
        let idx: Vec<usize> = (0..200).collect();
        let fit = lr_fit(&d, &idx);
        let base = fit(0).unwrap();
        let cfg = RashomonConfig { epsilon: 0.05, metric: Metric::LossGap, seeds: vec![1, 2, 3, 4] };
        let set = empirical_rashomon(&d, &idx, &cfg, Some(base), fit).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save_dir(dir.path()).unwrap();
        let back = RashomonSet::load_dir(dir.path()).unwrap();
        assert_eq!(back.members.len(), set.members.len());
        for (a, b) in back.members.iter().zip(&set.members) {
            assert_eq!(a.model(), b.model());
        }
        back.verify(&d, &idx).unwrap();
    }

    #[test]
    fn grid_defaults() {
        let g = CandidateGridConfig::default();
        assert_eq!(g.thresholds.len(), 10);
        assert!((g.thresholds[0] - 0.05).abs() < 1e-15 && (g.thresholds[9] - 0.95).abs() < 1e-15);
        assert_eq!(g.penalty_schedule.first(), Some(&10.0));
        assert_eq!(g.penalty_schedule.last(), Some(&1e4));
        assert!(CandidateGridConfig { thresholds: vec![0.5, 0.2], ..Default::default() }.validate().is_err());
        assert!(CandidateGridConfig { thresholds: vec![1.0], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn candidate_satisfies_both_inequalities() {
        let d = toy(300, 4);
        let idx: Vec<usize> = (0..300).collect();
        let l2 = 1e-3;
        let base = fit_baseline(&d, &idx, &candidate_baseline_config(l2)).unwrap();
        let bm = Model::Plain(base.clone());
        let targets = nearest_to_half(&bm, &d, &idx, 5);
        let grid = CandidateGridConfig::default();
        let set = constrained_candidates(&d, &idx, &base, l2, &targets, &grid, 0.05).unwrap();
        assert!(set.members.len() + set.rejected.len() <= 50);
        for m in &set.members {
            let Origin::Candidate { target, threshold } = m.origin else { panic!() };
            let p = m.model().scores_at(&d, &[target])[0];
            let p0 = bm.scores_at(&d, &[target])[0];
            if threshold < p0 {
                assert!(p <= threshold + grid.constraint_tolerance);
            } else {
                assert!(p >= threshold - grid.constraint_tolerance);
            }
            assert!(m.gap <= 0.05 + MEMBERSHIP_TOLERANCE);
        }
    }

    #[test]
    fn inactive_constraint_returns_baseline() {
        let d = toy(300, 5);
        let idx: Vec<usize> = (0..300).collect();
        let base = fit_baseline(&d, &idx, &candidate_baseline_config(0.0)).unwrap();
        let w0 = Array1::from(base.network.params.clone());
        let p0 = Model::Plain(base.clone()).scores_at(&d, &[7])[0];
        let (w, s) = solve_candidate(&d, &idx, &w0, 0.0, 7, p0, &CandidateGridConfig::default());
        assert!(s.feasible);
        assert!(w.iter().zip(&w0).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn membership_monotone_in_epsilon() {
        let d = toy(200, 6);
        let idx: Vec<usize> = (0..200).collect();
        let fit = lr_fit(&d, &idx);
        let base = fit(0).unwrap();
        let trained: Vec<(u64, Model)> = (1..9).map(|s| (s, fit(s).unwrap())).collect();
        let mut prev: Vec<String> = Vec::new();
        for eps in [0.001, 0.005, 0.01, 0.05, 0.5] {
            let cfg = RashomonConfig { epsilon: eps, metric: Metric::LossGap, seeds: (1..9).collect() };
            let ids: Vec<String> = match assemble_randomized(trained.clone(), Some(base.clone()), &cfg, &d, &idx) {
                Ok(s) => s.members.iter().map(|m| m.id.clone()).collect(),
                Err(RashomonError::EmptyRashomonSet { .. }) => Vec::new(),
                Err(e) => panic!("{e}"),
            };
            assert!(prev.iter().all(|p| ids.contains(p)));
            prev = ids;
        }
    }
}
