//! Small dense helpers: numerically stable link functions and a Cholesky
//! factorization for the symmetric positive definite systems that show up in
//! Newton steps and Laplace posteriors.

use ndarray::{Array1, Array2, ArrayView1};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a {0,1} label.
pub fn logit_cross_entropy(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

/// Cross-entropy of a probability, clamped away from 0 and 1.
pub fn prob_cross_entropy(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, or `None` when `A`
/// is not numerically positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solve `L Lᵀ x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(a: &Array2<f64>) -> Option<Array2<f64>> {
    let l = cholesky(a)?;
    let n = a.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(&l, e.view());
        inv.column_mut(j).assign(&col);
    }
    // symmetrize rounding noise
    let t = inv.t().to_owned();
    Some((inv + t) * 0.5)
}

/// Solve an SPD system, adding a growing diagonal jitter if the factorization
/// fails.
pub fn solve_spd_with_jitter(a: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    if let Some(l) = cholesky(a) {
        return cholesky_solve(&l, b);
    }
    let scale = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut jitter = 1e-10 * scale;
    loop {
        let mut aj = a.clone();
        aj.diag_mut().mapv_inplace(|v| v + jitter);
        if let Some(l) = cholesky(&aj) {
            return cholesky_solve(&l, b);
        }
        jitter *= 10.0;
    }
}
