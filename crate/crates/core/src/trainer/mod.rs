//! Model training: logistic regression and a one-hidden-layer ReLU network
//! fit by mini-batch gradient methods (or Newton for logistic regression),
//! Platt calibration, and the uncertainty-aware variant with a random-feature
//! Gaussian-process output head.

pub mod calibration;
pub mod io;
pub mod network;
pub mod newton;
pub mod uncertainty;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::linalg::sigmoid;
use crate::rng::{self, SeededRng};

pub use calibration::{platt_calibrate, Platt};
pub use network::{Arch, Network};
pub use uncertainty::{mean_field_probability, train_ua, HeadConfig, UAClassifier, UncertaintyHead};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training indices are empty")]
    EmptyTrainingSet,
    #[error("training labels contain a single class")]
    SingleClassTrainingSet,
    #[error("loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("posterior precision is not positive definite")]
    SingularPrecision,
    #[error("calibration holdout contains a single class")]
    DegenerateHoldout,
    #[error("calibration holdout overlaps the training indices")]
    HoldoutOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
    /// Full-batch Newton; logistic regression only.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::arch")]
    pub arch: Arch,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub l2_penalty: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::optimizer")]
    pub optimizer: Optimizer,
}

pub mod defaults {
    use super::*;

    pub const HIDDEN_UNITS: usize = 279;
    pub const LEARNING_RATE: f64 = 5.79e-5;
    pub const BATCH_SIZE: usize = 128;
    pub const EPOCHS: usize = 100;

    pub fn arch() -> Arch {
        Arch::Mlp { hidden_units: HIDDEN_UNITS }
    }
    pub fn learning_rate() -> f64 {
        LEARNING_RATE
    }
    pub fn batch_size() -> usize {
        BATCH_SIZE
    }
    pub fn epochs() -> usize {
        EPOCHS
    }
    pub fn optimizer() -> Optimizer {
        Optimizer::Adam
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: defaults::arch(),
            learning_rate: defaults::LEARNING_RATE,
            batch_size: defaults::BATCH_SIZE,
            epochs: defaults::EPOCHS,
            l2_penalty: 0.0,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn logistic() -> Self {
        Self { arch: Arch::LogisticRegression, ..Self::default() }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.l2_penalty >= 0.0) {
            return bad("l2_penalty must be >= 0");
        }
        if let Arch::Mlp { hidden_units: 0 } = self.arch {
            return bad("hidden_units must be >= 1");
        }
        if self.optimizer == Optimizer::Newton && self.arch != Arch::LogisticRegression {
            return bad("the newton optimizer supports logistic regression only");
        }
        Ok(())
    }
}

/// A trained scorer: `score(x) = sigmoid(a·logit(x) + b)` when calibrated,
/// `sigmoid(logit(x))` otherwise; `predict(x) = 1{score(x) ≥ 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub network: Network,
    pub calibration: Option<Platt>,
}

impl Classifier {
    pub fn arch(&self) -> Arch {
        self.network.arch
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.network.logits(x)
    }

    fn calibrated(&self, z: f64) -> f64 {
        match &self.calibration {
            Some(c) => c.apply(z),
            None => sigmoid(z),
        }
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.logits(x).iter().map(|&z| self.calibrated(z)).collect()
    }

    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        self.calibrated(self.network.logit_one(x))
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> u8 {
        threshold(self.score(x))
    }
}

/// The fixed decision rule; a score of exactly 0.5 is class 1.
pub fn threshold(score: f64) -> u8 {
    u8::from(score >= 0.5)
}

fn check_training_set(data: &Dataset, indices: &[usize]) -> Result<Vec<f64>, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let y: Vec<f64> = indices.iter().map(|&i| f64::from(data.y[i])).collect();
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(TrainError::SingleClassTrainingSet);
    }
    Ok(y)
}

/// Minimize mean cross-entropy + `l2_penalty·‖θ‖²` on `data[indices]`.
/// Deterministic in (data, indices, config).
pub fn train(data: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<Classifier, TrainError> {
    config.validate()?;
    let y = check_training_set(data, indices)?;
    let x = data.x.select(Axis(0), indices);
    let input_dim = data.x.ncols();
    let mut init_rng = SeededRng::new(config.seed, rng::stream::INIT);
    let mut net = Network::init(config.arch, input_dim, &mut init_rng);

    match config.optimizer {
        Optimizer::Newton => {
            let obj = newton::LogisticObjective { x: x.view(), y: &y, l2: config.l2_penalty, penalty: None };
            let res = newton::newton_minimize(&obj, Array1::from(net.params.clone()), 1e-10, 200);
            if !res.value.is_finite() {
                return Err(TrainError::DivergedLoss { epoch: 0 });
            }
            net.params = res.w.to_vec();
        }
        Optimizer::Sgd | Optimizer::Adam => {
            let mut opt = GradientStep::new(config.optimizer, config.learning_rate, net.params.len());
            let mut shuffle_rng = SeededRng::new(config.seed, rng::stream::SHUFFLE);
            let mut order: Vec<usize> = (0..indices.len()).collect();
            let mut yb = Vec::with_capacity(config.batch_size);
            for epoch in 0..config.epochs {
                shuffle_rng.shuffle(&mut order);
                for chunk in order.chunks(config.batch_size) {
                    let xb = x.select(Axis(0), chunk);
                    yb.clear();
                    yb.extend(chunk.iter().map(|&i| y[i]));
                    let (loss, grad) = net.loss_and_grad(xb.view(), &yb, config.l2_penalty);
                    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                        return Err(TrainError::DivergedLoss { epoch });
                    }
                    opt.apply(&mut net.params, &grad);
                }
            }
        }
    }
    Ok(Classifier { network: net, calibration: None })
}

struct GradientStep {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl GradientStep {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-7;

    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Self { kind, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for k in 0..params.len() {
                    self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * grad[k];
                    self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * grad[k] * grad[k];
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    params[k] -= self.lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
            Optimizer::Newton => unreachable!("newton is full batch"),
        }
    }
}

/// A model of either class, as stored in Rashomon sets and experiment runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Model {
    Plain(Classifier),
    UncertaintyAware(UAClassifier),
}

impl Model {
    /// Predicted probabilities; the mean-field probability for the
    /// uncertainty-aware class.
    pub fn scores(&self, x: ArrayView2<f64>) -> Vec<f64> {
        match self {
            Model::Plain(c) => c.scores(x),
            Model::UncertaintyAware(u) => u.predict(x).into_iter().map(|(p, _)| p).collect(),
        }
    }

    pub fn scores_at(&self, data: &Dataset, indices: &[usize]) -> Vec<f64> {
        self.scores(data.x.select(Axis(0), indices).view())
    }

    pub fn labels_at(&self, data: &Dataset, indices: &[usize]) -> Vec<u8> {
        self.scores_at(data, indices).into_iter().map(threshold).collect()
    }

    pub fn class(&self) -> ModelClass {
        match self {
            Model::Plain(_) => ModelClass::Plain,
            Model::UncertaintyAware(_) => ModelClass::UncertaintyAware,
        }
    }

    /// Predictive variance per row; `None` for the plain class.
    pub fn variances_at(&self, data: &Dataset, indices: &[usize]) -> Option<Vec<f64>> {
        match self {
            Model::Plain(_) => None,
            Model::UncertaintyAware(u) => {
                Some(u.predict(data.x.select(Axis(0), indices).view()).into_iter().map(|(_, v)| v).collect())
            }
        }
    }
}

/// The two model classes compared in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    /// Backbone with a Platt-calibrated output.
    Plain,
    /// Backbone hidden layer with the random-feature GP head.
    UncertaintyAware,
}

impl ModelClass {
    pub const ALL: [ModelClass; 2] = [ModelClass::Plain, ModelClass::UncertaintyAware];

    pub fn name(self) -> &'static str {
        match self {
            ModelClass::Plain => "plain",
            ModelClass::UncertaintyAware => "uncertainty_aware",
        }
    }

    /// Finish a trained backbone into a model of this class. `train_indices`
    /// are the rows the backbone saw; `calibration` is the Platt holdout
    /// (plain class only, skipped when empty).
    pub fn finish(
        self,
        backbone: Classifier,
        data: &Dataset,
        train_indices: &[usize],
        calibration: &[usize],
        head: &HeadConfig,
        seed: u64,
    ) -> Result<Model, TrainError> {
        match self {
            ModelClass::Plain if calibration.is_empty() => Ok(Model::Plain(backbone)),
            ModelClass::Plain => Ok(Model::Plain(platt_calibrate(&backbone, calibration, train_indices, data)?)),
            ModelClass::UncertaintyAware => {
                head.validate()?;
                let x = data.x.select(Axis(0), train_indices);
                let h = backbone.network.hidden(x.view());
                let y: Vec<f64> = train_indices.iter().map(|&i| f64::from(data.y[i])).collect();
                let fitted = uncertainty::fit_head(h.view(), &y, head, seed)?;
                Ok(Model::UncertaintyAware(UAClassifier { backbone, head: fitted }))
            }
        }
    }

    /// Train a backbone and finish it; identical to [`train`] followed by
    /// [`ModelClass::finish`].
    pub fn fit(
        self,
        data: &Dataset,
        train_indices: &[usize],
        calibration: &[usize],
        config: &TrainConfig,
        head: &HeadConfig,
    ) -> Result<Model, TrainError> {
        let backbone = train(data, train_indices, config)?;
        self.finish(backbone, data, train_indices, calibration, head, config.seed)
    }
}

/// `p(1 − p)` of a predicted probability; in [0, 0.25].
pub fn pointwise_uncertainty(p: f64) -> f64 {
    p * (1.0 - p)
}

/// Mean cross-entropy of `model` on `data[indices]`.
pub fn mean_log_loss(model: &Model, data: &Dataset, indices: &[usize]) -> f64 {
    let scores = model.scores_at(data, indices);
    scores
        .iter()
        .zip(indices)
        .map(|(&p, &i)| crate::linalg::prob_cross_entropy(p, f64::from(data.y[i])))
        .sum::<f64>()
        / indices.len() as f64
}

/// Zero-one error rate of `model` on `data[indices]`.
pub fn error_rate(model: &Model, data: &Dataset, indices: &[usize]) -> f64 {
    let labels = model.labels_at(data, indices);
    let wrong = labels.iter().zip(indices).filter(|(&l, &i)| l != data.y[i]).count();
    wrong as f64 / indices.len() as f64
}
