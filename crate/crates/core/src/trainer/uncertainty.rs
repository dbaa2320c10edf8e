//! Uncertainty-aware classifier: the trained backbone's hidden layer feeds a
//! random Fourier feature approximation of an RBF Gaussian process. The
//! output weights get a Laplace posterior and predictions use the mean-field
//! adjustment `sigmoid(logit / √(1 + λσ²))`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{train, Classifier, TrainConfig, TrainError};
use crate::dataset::Dataset;
use crate::linalg::{cholesky, cholesky_solve, logit_cross_entropy, sigmoid, spd_inverse};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Number of random Fourier features.
    #[serde(default = "HeadConfig::default_features")]
    pub features: usize,
    /// Gaussian prior precision on the output weights.
    #[serde(default = "HeadConfig::default_prior")]
    pub prior_precision: f64,
    /// Mean-field coefficient.
    #[serde(default = "HeadConfig::default_lambda")]
    pub lambda: f64,
    /// RBF lengthscale; `None` uses the median pairwise distance of a
    /// seeded subsample of training representations.
    #[serde(default)]
    pub lengthscale: Option<f64>,
}

impl HeadConfig {
    fn default_features() -> usize {
        256
    }
    fn default_prior() -> f64 {
        1.0
    }
    fn default_lambda() -> f64 {
        PI / 8.0
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if self.features == 0 {
            return bad("head.features must be >= 1");
        }
        if !(self.prior_precision > 0.0 && self.prior_precision.is_finite()) {
            return bad("head.prior_precision must be > 0");
        }
        if !(self.lambda >= 0.0) {
            return bad("head.lambda must be >= 0");
        }
        if matches!(self.lengthscale, Some(l) if !(l > 0.0)) {
            return bad("head.lengthscale must be > 0");
        }
        Ok(())
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            features: Self::default_features(),
            prior_precision: Self::default_prior(),
            lambda: Self::default_lambda(),
            lengthscale: None,
        }
    }
}

/// Persisted form; the covariance is rebuilt from the precision on load.
#[derive(Serialize, Deserialize)]
struct HeadRepr {
    rff_weights: Array2<f64>,
    rff_bias: Array1<f64>,
    rff_scale: f64,
    posterior_mean: Array1<f64>,
    posterior_precision: Array2<f64>,
    lambda: f64,
}

/// Feature map `φ(h) = [√(2/D)·cos(W h / ℓ + b), 1]`; the trailing constant
/// is an intercept feature under the same prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "HeadRepr", try_from = "HeadRepr")]
pub struct UncertaintyHead {
    pub rff_weights: Array2<f64>,
    pub rff_bias: Array1<f64>,
    pub rff_scale: f64,
    pub posterior_mean: Array1<f64>,
    pub posterior_precision: Array2<f64>,
    pub lambda: f64,
    covariance: Array2<f64>,
}

impl From<UncertaintyHead> for HeadRepr {
    fn from(h: UncertaintyHead) -> Self {
        HeadRepr {
            rff_weights: h.rff_weights,
            rff_bias: h.rff_bias,
            rff_scale: h.rff_scale,
            posterior_mean: h.posterior_mean,
            posterior_precision: h.posterior_precision,
            lambda: h.lambda,
        }
    }
}

impl TryFrom<HeadRepr> for UncertaintyHead {
    type Error = TrainError;

    fn try_from(r: HeadRepr) -> Result<Self, TrainError> {
        let covariance = spd_inverse(&r.posterior_precision).ok_or(TrainError::SingularPrecision)?;
        Ok(UncertaintyHead {
            rff_weights: r.rff_weights,
            rff_bias: r.rff_bias,
            rff_scale: r.rff_scale,
            posterior_mean: r.posterior_mean,
            posterior_precision: r.posterior_precision,
            lambda: r.lambda,
            covariance,
        })
    }
}

impl UncertaintyHead {
    pub fn n_features(&self) -> usize {
        self.posterior_mean.len()
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    pub fn features(&self, h: ArrayView2<f64>) -> Array2<f64> {
        rff_features(h, self.rff_weights.view(), self.rff_bias.view(), self.rff_scale)
    }

    /// (logit, σ²) per row of the hidden representation.
    pub fn logit_and_variance(&self, h: ArrayView2<f64>) -> Vec<(f64, f64)> {
        let phi = self.features(h);
        let logits = phi.dot(&self.posterior_mean);
        let cphi = phi.dot(&self.covariance);
        logits
            .iter()
            .zip(cphi.rows())
            .zip(phi.rows())
            .map(|((&z, c), p)| (z, c.dot(&p).max(0.0)))
            .collect()
    }
}

fn rff_features(h: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>, scale: f64) -> Array2<f64> {
    let d = w.nrows();
    let amp = (2.0 / d as f64).sqrt();
    let proj = h.dot(&w.t());
    let mut out = Array2::<f64>::ones((h.nrows(), d + 1));
    for ((i, k), v) in proj.indexed_iter() {
        out[[i, k]] = amp * (v / scale + b[k]).cos();
    }
    out
}

/// Median pairwise Euclidean distance over at most 512 seeded rows.
fn median_distance(h: ArrayView2<f64>, rng: &mut SeededRng) -> f64 {
    let n = h.nrows();
    let all: Vec<usize> = (0..n).collect();
    let rows = if n > 512 { rng.sample(&all, 512) } else { all };
    let mut dists = Vec::with_capacity(rows.len() * rows.len() / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let d2: f64 = h.row(i).iter().zip(h.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists[dists.len() / 2];
    if m > 0.0 { m } else { 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UAClassifier {
    /// Only the hidden layer of the backbone is used at prediction time.
    pub backbone: Classifier,
    pub head: UncertaintyHead,
}

impl UAClassifier {
    pub fn logit_and_variance(&self, x: ArrayView2<f64>) -> Vec<(f64, f64)> {
        let h = self.backbone.network.hidden(x);
        self.head.logit_and_variance(h.view())
    }

    /// Mean-field probability and predictive variance per row.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<(f64, f64)> {
        self.logit_and_variance(x)
            .into_iter()
            .map(|(z, v)| (mean_field_probability(z, v, self.head.lambda), v))
            .collect()
    }

    pub fn predict_one(&self, x: ArrayView1<f64>) -> (f64, f64) {
        self.predict(x.insert_axis(Axis(0)))[0]
    }
}

pub fn mean_field_probability(logit: f64, variance: f64, lambda: f64) -> f64 {
    sigmoid(logit / (1.0 + lambda * variance).sqrt())
}

/// Train the backbone as in [`train`], then fit the random-feature head on
/// the backbone's hidden representation of the same rows.
pub fn train_ua(
    data: &Dataset,
    indices: &[usize],
    config: &TrainConfig,
    head: &HeadConfig,
) -> Result<UAClassifier, TrainError> {
    head.validate()?;
    let backbone = train(data, indices, config)?;
    let x = data.x.select(Axis(0), indices);
    let h = backbone.network.hidden(x.view());
    let y: Vec<f64> = indices.iter().map(|&i| f64::from(data.y[i])).collect();
    let fitted = fit_head(h.view(), &y, head, config.seed)?;
    Ok(UAClassifier { backbone, head: fitted })
}

/// MAP output weights by Newton on `Σ CE + (prior/2)‖β‖²`, then the Laplace
/// precision `prior·I + Σ p(1−p) φφᵀ` at the MAP.
pub fn fit_head(h: ArrayView2<f64>, y: &[f64], cfg: &HeadConfig, seed: u64) -> Result<UncertaintyHead, TrainError> {
    let dim = h.ncols();
    let mut rng = SeededRng::new(seed, rng::stream::RFF);
    let mut w = Array2::<f64>::zeros((cfg.features, dim));
    w.mapv_inplace(|_| rng.normal());
    let b = Array1::from_shape_fn(cfg.features, |_| 2.0 * PI * rng.uniform());
    let scale = match cfg.lengthscale {
        Some(l) => l,
        None => median_distance(h, &mut SeededRng::new(seed, rng::stream::LENGTHSCALE)),
    };
    let phi = rff_features(h, w.view(), b.view(), scale);
    let k = phi.ncols();
    let prior = cfg.prior_precision;

    let objective = |beta: &Array1<f64>| -> f64 {
        let z = phi.dot(beta);
        z.iter().zip(y).map(|(&z, &y)| logit_cross_entropy(z, y)).sum::<f64>() + 0.5 * prior * beta.dot(beta)
    };
    let precision_at = |beta: &Array1<f64>| -> (Array1<f64>, Array2<f64>) {
        let z = phi.dot(beta);
        let mut r = Array1::<f64>::zeros(z.len());
        let mut s = Array1::<f64>::zeros(z.len());
        for i in 0..z.len() {
            let p = sigmoid(z[i]);
            r[i] = p - y[i];
            s[i] = (p * (1.0 - p)).sqrt();
        }
        let g = phi.t().dot(&r) + beta * prior;
        let ps = &phi * &s.insert_axis(Axis(1));
        let mut prec = ps.t().dot(&ps);
        prec.diag_mut().mapv_inplace(|v| v + prior);
        let t = prec.t().to_owned();
        (g, (prec + t) * 0.5)
    };

    let mut beta = Array1::<f64>::zeros(k);
    let mut f = objective(&beta);
    for _ in 0..50 {
        let (g, prec) = precision_at(&beta);
        if g.iter().all(|v| v.abs() < 1e-8 * (1.0 + y.len() as f64).sqrt()) {
            break;
        }
        let l = cholesky(&prec).ok_or(TrainError::SingularPrecision)?;
        let step = cholesky_solve(&l, g.view());
        let slope = -g.dot(&step);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let cand = &beta - &(&step * t);
            let fc = objective(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * t * slope {
                beta = cand;
                f = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (_, precision) = precision_at(&beta);
    let covariance = spd_inverse(&precision).ok_or(TrainError::SingularPrecision)?;
    Ok(UncertaintyHead {
        rff_weights: w,
        rff_bias: b,
        rff_scale: scale,
        posterior_mean: beta,
        posterior_precision: precision,
        lambda: cfg.lambda,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_field_examples() {
        let lam = PI / 8.0;
        assert_eq!(mean_field_probability(0.0, 3.0, lam), 0.5);
        let oracle = |z: f64| 1.0 / (1.0 + (-z).exp());
        assert!((mean_field_probability(2.0, 0.0, lam) - oracle(2.0)).abs() < 1e-15);
        assert!((mean_field_probability(2.0, 0.0, lam) - 0.8808).abs() < 1e-4);
        let p = mean_field_probability(2.0, 8.0 / PI, lam);
        assert!((p - oracle(2.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((p - 0.8044).abs() < 1e-4);
    }

    #[test]
    fn head_round_trips_through_json() {
        let h = ndarray::array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]];
        let y = [0.0, 1.0, 0.0, 1.0];
        let cfg = HeadConfig { features: 8, ..Default::default() };
        let head = fit_head(h.view(), &y, &cfg, 4).unwrap();
        let s = serde_json::to_string(&head).unwrap();
        let back: UncertaintyHead = serde_json::from_str(&s).unwrap();
        assert_eq!(back.posterior_mean, head.posterior_mean);
        for (a, b) in back.covariance().iter().zip(head.covariance()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_head_config() {
        assert!(HeadConfig { features: 0, ..Default::default() }.validate().is_err());
        assert!(HeadConfig { prior_precision: 0.0, ..Default::default() }.validate().is_err());
        assert!(HeadConfig { lengthscale: Some(-1.0), ..Default::default() }.validate().is_err());
    }
}
