//! Parameter layout, forward pass and analytic gradients for the two
//! architectures. Parameters live in one flat vector so optimizers and
//! finite-difference checks can treat every architecture alike.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::linalg::{logit_cross_entropy, sigmoid};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    LogisticRegression,
    Mlp { hidden_units: usize },
}

/// Flat parameters. Layouts:
/// - logistic regression: `w` (input_dim), `w[0]` multiplies the intercept column;
/// - MLP: `W1` (hidden × input_dim, row-major), `w2` (hidden), `b2` (1).
///   The intercept column of the input makes `W1[:, 0]` the hidden bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Arch,
    pub input_dim: usize,
    pub params: Vec<f64>,
}

impl Network {
    pub fn n_params(arch: Arch, input_dim: usize) -> usize {
        match arch {
            Arch::LogisticRegression => input_dim,
            Arch::Mlp { hidden_units } => hidden_units * input_dim + hidden_units + 1,
        }
    }

    pub fn zeros(arch: Arch, input_dim: usize) -> Self {
        Self { arch, input_dim, params: vec![0.0; Self::n_params(arch, input_dim)] }
    }

    /// He-normal hidden weights with zero hidden bias; Glorot-normal output
    /// weights. Logistic regression starts from small Gaussian weights so
    /// that seeds lead to different optimization paths.
    pub fn init(arch: Arch, input_dim: usize, rng: &mut SeededRng) -> Self {
        let mut net = Self::zeros(arch, input_dim);
        match arch {
            Arch::LogisticRegression => {
                for p in net.params.iter_mut() {
                    *p = 0.01 * rng.normal();
                }
            }
            Arch::Mlp { hidden_units } => {
                let fan_in = (input_dim - 1).max(1) as f64;
                let he = (2.0 / fan_in).sqrt();
                for r in 0..hidden_units {
                    for c in 1..input_dim {
                        net.params[r * input_dim + c] = he * rng.normal();
                    }
                }
                let glorot = (2.0 / (hidden_units as f64 + 1.0)).sqrt();
                let off = hidden_units * input_dim;
                for k in 0..hidden_units {
                    net.params[off + k] = glorot * rng.normal();
                }
            }
        }
        net
    }

    fn mlp_views(&self, hidden: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>, f64) {
        let off = hidden * self.input_dim;
        let w1 = ArrayView2::from_shape((hidden, self.input_dim), &self.params[..off]).expect("layout");
        let w2 = ArrayView1::from(&self.params[off..off + hidden]);
        (w1, w2, self.params[off + hidden])
    }

    /// Penalty mask: 1 for parameters under the L2 term. The intercept
    /// weights (hidden bias column, output bias) are not penalized.
    pub fn penalty_mask(&self) -> Vec<f64> {
        let mut mask = vec![1.0; self.params.len()];
        match self.arch {
            Arch::LogisticRegression => mask[0] = 0.0,
            Arch::Mlp { hidden_units } => {
                for r in 0..hidden_units {
                    mask[r * self.input_dim] = 0.0;
                }
                *mask.last_mut().unwrap() = 0.0;
            }
        }
        mask
    }

    /// Post-activation hidden representation. Logistic regression has no
    /// hidden layer, so the input itself is returned.
    pub fn hidden(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self.arch {
            Arch::LogisticRegression => x.to_owned(),
            Arch::Mlp { hidden_units } => {
                let (w1, _, _) = self.mlp_views(hidden_units);
                let mut h = x.dot(&w1.t());
                h.mapv_inplace(|v| v.max(0.0));
                h
            }
        }
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        match self.arch {
            Arch::LogisticRegression => x.dot(&ArrayView1::from(&self.params[..])),
            Arch::Mlp { hidden_units } => {
                let (_, w2, b2) = self.mlp_views(hidden_units);
                let h = self.hidden(x);
                h.dot(&w2) + b2
            }
        }
    }

    pub fn logit_one(&self, x: ArrayView1<f64>) -> f64 {
        self.logits(x.insert_axis(Axis(0))).into_iter().next().unwrap()
    }

    /// Mean cross-entropy over the rows of `x` plus `l2·‖θ‖²` over penalized
    /// parameters, and its gradient with respect to `params`.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: &[f64], l2: f64) -> (f64, Vec<f64>) {
        let n = x.nrows() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let data_loss = match self.arch {
            Arch::LogisticRegression => {
                let z = self.logits(x);
                let mut loss = 0.0;
                let mut dz = Array1::<f64>::zeros(z.len());
                for i in 0..z.len() {
                    loss += logit_cross_entropy(z[i], y[i]);
                    dz[i] = (sigmoid(z[i]) - y[i]) / n;
                }
                let g = x.t().dot(&dz);
                grad.copy_from_slice(g.as_slice().expect("contiguous"));
                loss / n
            }
            Arch::Mlp { hidden_units } => {
                let (w1, w2, b2) = self.mlp_views(hidden_units);
                let w2 = w2.as_slice().expect("contiguous");
                let mut h = x.dot(&w1.t());
                let mut loss = 0.0;
                let mut gw2 = vec![0.0; hidden_units];
                let mut gb2 = 0.0;
                // one pass per row: relu, output logit, then overwrite the
                // activations with dH = dz·w2 masked by the relu derivative
                for (mut row, &yi) in h.rows_mut().into_iter().zip(y) {
                    let row = row.as_slice_mut().expect("row-major");
                    let mut z = b2;
                    for (v, &w) in row.iter_mut().zip(w2) {
                        *v = v.max(0.0);
                        z += *v * w;
                    }
                    loss += logit_cross_entropy(z, yi);
                    let dz = (sigmoid(z) - yi) / n;
                    gb2 += dz;
                    for ((v, &w), g) in row.iter_mut().zip(w2).zip(gw2.iter_mut()) {
                        *g += dz * *v;
                        *v = if *v > 0.0 { dz * w } else { 0.0 };
                    }
                }
                let dh = h;
                let gw1 = dh.t().dot(&x);
                let off = hidden_units * self.input_dim;
                grad[..off].copy_from_slice(gw1.as_standard_layout().as_slice().expect("contiguous"));
                grad[off..off + hidden_units].copy_from_slice(&gw2);
                grad[off + hidden_units] = gb2;
                loss / n
            }
        };
        let mut penalty = 0.0;
        if l2 > 0.0 {
            for ((g, p), m) in grad.iter_mut().zip(&self.params).zip(self.penalty_mask()) {
                penalty += m * p * p;
                *g += 2.0 * l2 * m * p;
            }
        }
        (data_loss + l2 * penalty, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(Network::n_params(Arch::LogisticRegression, 5), 5);
        assert_eq!(Network::n_params(Arch::Mlp { hidden_units: 3 }, 5), 3 * 5 + 3 + 1);
    }

    #[test]
    fn zero_network_predicts_half() {
        let net = Network::zeros(Arch::Mlp { hidden_units: 4 }, 3);
        let x = ndarray::array![[1.0, 0.3, -2.0]];
        assert_eq!(sigmoid(net.logits(x.view())[0]), 0.5);
    }

    #[test]
    fn penalty_mask_skips_biases() {
        let net = Network::zeros(Arch::Mlp { hidden_units: 2 }, 3);
        assert_eq!(net.penalty_mask(), vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }
}
