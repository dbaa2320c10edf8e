//! Platt scaling: a two-parameter logistic map fit on held-out raw logits.

use ndarray::{array, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Classifier, TrainError};
use crate::dataset::Dataset;
use crate::linalg::{logit_cross_entropy, sigmoid, solve_spd_with_jitter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub const IDENTITY: Platt = Platt { a: 1.0, b: 0.0 };

    pub fn apply(&self, logit: f64) -> f64 {
        sigmoid(self.a * logit + self.b)
    }

    /// Maximum-likelihood (a, b) for labels `y` given raw logits `z`.
    /// Damped Newton on the 2-parameter negative log-likelihood.
    pub fn fit(z: &[f64], y: &[f64]) -> Result<Platt, TrainError> {
        if y.is_empty() || y.iter().all(|&v| v == y[0]) {
            return Err(TrainError::DegenerateHoldout);
        }
        let n = z.len() as f64;
        let nll = |a: f64, b: f64| -> f64 {
            z.iter().zip(y).map(|(&zi, &yi)| logit_cross_entropy(a * zi + b, yi)).sum::<f64>() / n
        };
        // a tiny ridge keeps separable holdouts finite
        const RIDGE: f64 = 1e-8;
        let obj = |a: f64, b: f64| nll(a, b) + RIDGE * (a * a + b * b);
        let (mut a, mut b) = (1.0, 0.0);
        let mut f = obj(a, b);
        for _ in 0..100 {
            let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&zi, &yi) in z.iter().zip(y) {
                let p = sigmoid(a * zi + b);
                let r = p - yi;
                let w = p * (1.0 - p);
                ga += r * zi;
                gb += r;
                haa += w * zi * zi;
                hab += w * zi;
                hbb += w;
            }
            let g: Array1<f64> = array![ga / n + 2.0 * RIDGE * a, gb / n + 2.0 * RIDGE * b];
            if g.iter().all(|v| v.abs() < 1e-12) {
                break;
            }
            let h: Array2<f64> = array![[haa / n + 2.0 * RIDGE, hab / n], [hab / n, hbb / n + 2.0 * RIDGE]];
            let step = solve_spd_with_jitter(&h, g.view());
            let slope = -g.dot(&step);
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let (ca, cb) = (a - t * step[0], b - t * step[1]);
                let fc = obj(ca, cb);
                if fc <= f + 1e-4 * t * slope {
                    a = ca;
                    b = cb;
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
        Ok(Platt { a, b })
    }
}

/// Fit Platt parameters on `data[holdout]` using the classifier's raw logits
/// and return a calibrated copy.
pub fn platt_calibrate(
    clf: &Classifier,
    holdout: &[usize],
    train_indices: &[usize],
    data: &Dataset,
) -> Result<Classifier, TrainError> {
    let train: std::collections::HashSet<usize> = train_indices.iter().copied().collect();
    if holdout.iter().any(|i| train.contains(i)) {
        return Err(TrainError::HoldoutOverlap);
    }
    let x = data.x.select(Axis(0), holdout);
    let z = clf.network.logits(x.view()).to_vec();
    let y: Vec<f64> = holdout.iter().map(|&i| f64::from(data.y[i])).collect();
    let platt = Platt::fit(&z, &y)?;
    Ok(Classifier { network: clf.network.clone(), calibration: Some(platt) })
}
