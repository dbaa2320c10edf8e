//! Instability metrics over fixed prediction matrices: churn and its
//! smooth relaxation, ambiguity, discrepancy, unstable sets, common
//! arbitrariness, probability-flip histograms and uncertainty curves.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::threshold;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("row {index} out of range for a matrix with {rows} rows")]
    BadRowIndex { index: usize, rows: usize },
    #[error("gamma must be > 0, got {0}")]
    InvalidGamma(f64),
    #[error("score {value} at model {model}, sample {sample} is not a finite value in [0, 1]")]
    InvalidScore { model: usize, sample: usize, value: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("prediction matrix has no rows")]
    NoModels,
    #[error("n_bins must be >= 1")]
    NoBins,
    #[error("AUC needs both classes among the labels")]
    SingleClass,
    #[error("index {index} out of range for a sample of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed prediction csv: {0}")]
    Format(String),
}

fn same_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a == b { Ok(()) } else { Err(MetricsError::LengthMismatch { left: a, right: b }) }
}

/// m × s scores with their 0.5-threshold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct PredictionMatrix {
    scores: Vec<Vec<f64>>,
    labels: Vec<Vec<u8>>,
    sample_ids: Vec<String>,
    model_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    model_ids: Vec<String>,
    sample_ids: Vec<String>,
    scores: Vec<Vec<f64>>,
}

impl TryFrom<MatrixRepr> for PredictionMatrix {
    type Error = MetricsError;
    fn try_from(r: MatrixRepr) -> Result<Self, MetricsError> {
        PredictionMatrix::new(r.scores, r.sample_ids, r.model_ids)
    }
}

impl From<PredictionMatrix> for MatrixRepr {
    fn from(p: PredictionMatrix) -> Self {
        MatrixRepr { model_ids: p.model_ids, sample_ids: p.sample_ids, scores: p.scores }
    }
}

impl PredictionMatrix {
    pub fn new(scores: Vec<Vec<f64>>, sample_ids: Vec<String>, model_ids: Vec<String>) -> Result<Self, MetricsError> {
        same_len(scores.len(), model_ids.len())?;
        for (k, row) in scores.iter().enumerate() {
            same_len(row.len(), sample_ids.len())?;
            if let Some((i, &v)) = row.iter().enumerate().find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
                return Err(MetricsError::InvalidScore { model: k, sample: i, value: v });
            }
        }
        let labels = scores.iter().map(|r| r.iter().map(|&p| threshold(p)).collect()).collect();
        Ok(Self { scores, labels, sample_ids, model_ids })
    }

    /// Matrix with numeric sample ids `0..s` and model ids `m0, m1, ...`.
    pub fn from_scores(scores: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let s = scores.first().map_or(0, Vec::len);
        let m = scores.len();
        Self::new(scores, (0..s).map(|i| i.to_string()).collect(), (0..m).map(|k| format!("m{k}")).collect())
    }

    /// Label-only matrix; scores are set to the labels themselves.
    pub fn from_labels(labels: &[Vec<u8>]) -> Result<Self, MetricsError> {
        Self::from_scores(labels.iter().map(|r| r.iter().map(|&l| f64::from(l)).collect()).collect())
    }

    pub fn m(&self) -> usize {
        self.scores.len()
    }
    pub fn s(&self) -> usize {
        self.sample_ids.len()
    }
    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }
    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }
    pub fn row_labels(&self, k: usize) -> &[u8] {
        &self.labels[k]
    }
    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }
    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    /// Append a model row.
    pub fn push(&mut self, model_id: impl Into<String>, scores: Vec<f64>) -> Result<(), MetricsError> {
        let mut rows = std::mem::take(&mut self.scores);
        rows.push(scores);
        let mut ids = std::mem::take(&mut self.model_ids);
        ids.push(model_id.into());
        *self = Self::new(rows, std::mem::take(&mut self.sample_ids), ids)?;
        Ok(())
    }

    fn check_row(&self, k: usize) -> Result<(), MetricsError> {
        if k < self.m() { Ok(()) } else { Err(MetricsError::BadRowIndex { index: k, rows: self.m() }) }
    }

    /// Header `model_id,<sample ids>`, one row of scores per model.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["model_id".to_owned()];
        header.extend(self.sample_ids.iter().cloned());
        out.write_record(&header)?;
        for (id, row) in self.model_ids.iter().zip(&self.scores) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("model_id") {
            return Err(MetricsError::Format("first header cell must be model_id".into()));
        }
        let sample_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut model_ids = Vec::new();
        let mut scores = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            model_ids.push(rec.get(0).unwrap_or_default().to_owned());
            let row = rec
                .iter()
                .skip(1)
                .map(|c| c.trim().parse::<f64>().map_err(|_| MetricsError::Format(format!("not a number: {c:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            scores.push(row);
        }
        Self::new(scores, sample_ids, model_ids)
    }
}

// --- churn ------------------------------------------------------------------

/// Fraction of positions where the two label vectors disagree.
pub fn churn(a: &[u8], b: &[u8]) -> Result<f64, MetricsError> {
    same_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let d = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(d as f64 / a.len() as f64)
}

/// Zero-one error rate of A minus that of B.
pub fn signed_loss_churn(scores_a: &[f64], scores_b: &[f64], y: &[u8]) -> Result<f64, MetricsError> {
    same_len(scores_a.len(), scores_b.len())?;
    same_len(scores_a.len(), y.len())?;
    if y.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut diff: i64 = 0;
    for i in 0..y.len() {
        diff += i64::from(threshold(scores_a[i]) != y[i]) - i64::from(threshold(scores_b[i]) != y[i]);
    }
    Ok(diff as f64 / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothChurnParams {
    pub gamma: f64,
}

impl SmoothChurnParams {
    pub fn new(gamma: f64) -> Result<Self, MetricsError> {
        if gamma > 0.0 && gamma.is_finite() { Ok(Self { gamma }) } else { Err(MetricsError::InvalidGamma(gamma)) }
    }
}

/// Margin of a score against a {0,1} label: `(2f − 1)(2y − 1)`.
pub fn margin(score: f64, y: u8) -> f64 {
    (2.0 * score - 1.0) * (2.0 * f64::from(y) - 1.0)
}

/// Ramp loss: 1 below margin 0, linear down to 0 at margin γ.
pub fn ramp_loss(m: f64, gamma: f64) -> f64 {
    if m < 0.0 {
        1.0
    } else if m <= gamma {
        1.0 - m / gamma
    } else {
        0.0
    }
}

pub fn smooth_churn(scores_a: &[f64], scores_b: &[f64], y: &[u8], params: SmoothChurnParams) -> Result<f64, MetricsError> {
    same_len(scores_a.len(), scores_b.len())?;
    same_len(scores_a.len(), y.len())?;
    if y.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    if !(params.gamma > 0.0) {
        return Err(MetricsError::InvalidGamma(params.gamma));
    }
    let g = params.gamma;
    let total: f64 = (0..y.len())
        .map(|i| ramp_loss(margin(scores_a[i], y[i]), g) - ramp_loss(margin(scores_b[i], y[i]), g))
        .sum();
    Ok(total / y.len() as f64)
}

// --- multiplicity -------------------------------------------------------------

fn column_constant(pm: &PredictionMatrix, i: usize) -> bool {
    let first = pm.labels[0][i];
    pm.labels.iter().all(|r| r[i] == first)
}

/// Columns whose label is not constant across the rows.
pub fn rashomon_unstable_set(pm: &PredictionMatrix) -> Vec<usize> {
    if pm.m() == 0 {
        return Vec::new();
    }
    (0..pm.s()).filter(|&i| !column_constant(pm, i)).collect()
}

pub fn empirical_ambiguity(pm: &PredictionMatrix) -> Result<f64, MetricsError> {
    if pm.s() == 0 {
        return Err(MetricsError::EmptySample);
    }
    Ok(rashomon_unstable_set(pm).len() as f64 / pm.s() as f64)
}

/// Fraction of columns where some row disagrees with the baseline row.
pub fn baseline_ambiguity(pm: &PredictionMatrix, baseline: usize) -> Result<f64, MetricsError> {
    pm.check_row(baseline)?;
    if pm.s() == 0 {
        return Err(MetricsError::EmptySample);
    }
    let base = &pm.labels[baseline];
    let hit = (0..pm.s()).filter(|&i| pm.labels.iter().any(|r| r[i] != base[i])).count();
    Ok(hit as f64 / pm.s() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub value: f64,
    /// Row attaining the maximum (first one on ties).
    pub row: usize,
    pub model_id: String,
}

/// Largest churn of any row against the baseline row.
pub fn discrepancy(pm: &PredictionMatrix, baseline: usize) -> Result<Discrepancy, MetricsError> {
    pm.check_row(baseline)?;
    let base = &pm.labels[baseline];
    let mut best = (0usize, baseline);
    for (k, row) in pm.labels.iter().enumerate() {
        let d = row.iter().zip(base).filter(|(a, b)| a != b).count();
        if d > best.0 {
            best = (d, k);
        }
    }
    if pm.s() == 0 {
        return Err(MetricsError::EmptySample);
    }
    Ok(Discrepancy { value: best.0 as f64 / pm.s() as f64, row: best.1, model_id: pm.model_ids[best.1].clone() })
}

pub fn churn_unstable_set(a: &[u8], b: &[u8]) -> Result<Vec<usize>, MetricsError> {
    same_len(a.len(), b.len())?;
    Ok((0..a.len()).filter(|&i| a[i] != b[i]).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnstableSets {
    pub rashomon_unstable: Vec<usize>,
    pub churn_unstable: Vec<usize>,
    pub sample_ids: Vec<String>,
}

impl UnstableSets {
    pub fn new(pm: &PredictionMatrix, a: &[u8], b: &[u8]) -> Result<Self, MetricsError> {
        same_len(pm.s(), a.len())?;
        Ok(Self {
            rashomon_unstable: rashomon_unstable_set(pm),
            churn_unstable: churn_unstable_set(a, b)?,
            sample_ids: pm.sample_ids.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommonArbitrariness {
    pub value: f64,
    pub intersection: usize,
    pub churn_unstable: usize,
    /// True when the churn unstable set is empty and `value` is the
    /// vacuous 1.0.
    pub empty_denominator: bool,
}

/// `|U_R ∩ U_C| / |U_C|`; 1.0 with a flag when `U_C` is empty.
pub fn common_arbitrariness(u_r: &[usize], u_c: &[usize]) -> CommonArbitrariness {
    let r: std::collections::HashSet<usize> = u_r.iter().copied().collect();
    let c: std::collections::BTreeSet<usize> = u_c.iter().copied().collect();
    let inter = c.iter().filter(|i| r.contains(i)).count();
    if c.is_empty() {
        return CommonArbitrariness { value: 1.0, intersection: 0, churn_unstable: 0, empty_denominator: true };
    }
    CommonArbitrariness {
        value: inter as f64 / c.len() as f64,
        intersection: inter,
        churn_unstable: c.len(),
        empty_denominator: false,
    }
}

// --- plots ------------------------------------------------------------------

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_THRESHOLDS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub flips: usize,
    pub flip_proportion: f64,
    pub empty: bool,
}

/// Bin `k` covers `[k/n, (k+1)/n)`; the last bin also holds 1.0.
pub fn bin_index(score: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut k = ((score * n).floor().max(0.0) as usize).min(n_bins - 1);
    while k > 0 && score < k as f64 / n {
        k -= 1;
    }
    while k + 1 < n_bins && score >= (k + 1) as f64 / n {
        k += 1;
    }
    k
}

pub fn probability_flip_bins(scores: &[f64], unstable: &[usize], n_bins: usize) -> Result<Vec<FlipBin>, MetricsError> {
    if n_bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let mut flagged = vec![false; scores.len()];
    for &i in unstable {
        *flagged.get_mut(i).ok_or(MetricsError::IndexOutOfRange { index: i, size: scores.len() })? = true;
    }
    let mut count = vec![0usize; n_bins];
    let mut flips = vec![0usize; n_bins];
    for (i, &p) in scores.iter().enumerate() {
        let k = bin_index(p, n_bins);
        count[k] += 1;
        flips[k] += usize::from(flagged[i]);
    }
    Ok((0..n_bins)
        .map(|k| FlipBin {
            lo: k as f64 / n_bins as f64,
            hi: (k + 1) as f64 / n_bins as f64,
            count: count[k],
            flips: flips[k],
            flip_proportion: if count[k] == 0 { 0.0 } else { flips[k] as f64 / count[k] as f64 },
            empty: count[k] == 0,
        })
        .collect())
}

/// `n` evenly spaced thresholds from 0 to 0.25 inclusive.
pub fn default_thresholds(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| 0.25 * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub proportion: f64,
    /// No unstable points: the proportion is reported as 0 and is not defined.
    pub undefined: bool,
}

/// Share of unstable points whose uncertainty is at least each threshold.
pub fn uncertainty_threshold_curve(
    uncertainties: &[f64],
    unstable: &[usize],
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>, MetricsError> {
    let mut u = Vec::with_capacity(unstable.len());
    for &i in unstable {
        u.push(*uncertainties.get(i).ok_or(MetricsError::IndexOutOfRange { index: i, size: uncertainties.len() })?);
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            if u.is_empty() {
                CurvePoint { threshold: t, proportion: 0.0, undefined: true }
            } else {
                let c = u.iter().filter(|&&v| v >= t).count();
                CurvePoint { threshold: t, proportion: c as f64 / u.len() as f64, undefined: false }
            }
        })
        .collect())
}

// --- ranking ----------------------------------------------------------------

/// Area under the ROC curve by the Mann-Whitney statistic with midranks for
/// tied scores.
pub fn auc(scores: &[f64], y: &[u8]) -> Result<f64, MetricsError> {
    same_len(scores.len(), y.len())?;
    let pos = y.iter().filter(|&&v| v == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if y[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn churn_examples() {
        assert_eq!(churn(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 0.0);
        assert_eq!(churn(&[0, 1, 1, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(churn(&[0], &[0, 1]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn worst_case_churn_from_disjoint_errors() {
        // A misses 10 of 100 points, B misses 9 others; every error flips
        let y = vec![1u8; 100];
        let mut a = y.clone();
        let mut b = y.clone();
        a[..10].iter_mut().for_each(|v| *v = 0);
        b[10..19].iter_mut().for_each(|v| *v = 0);
        let acc = |h: &[u8]| h.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / 100.0;
        assert_eq!((acc(&a), acc(&b)), (0.90, 0.91));
        assert!((churn(&a, &b).unwrap() - 0.19).abs() < 1e-15);
    }

    #[test]
    fn signed_loss_examples() {
        let y = [1, 0, 1, 0];
        assert_eq!(signed_loss_churn(&[0.3, 0.6, 0.4, 0.9], &[0.3, 0.6, 0.4, 0.9], &y).unwrap(), 0.0);
        assert_eq!(signed_loss_churn(&[0.0, 1.0, 0.0, 1.0], &[1.0, 0.0, 1.0, 0.0], &y).unwrap(), 1.0);
    }

    #[test]
    fn smooth_churn_examples() {
        let g1 = SmoothChurnParams::new(1.0).unwrap();
        assert_eq!(smooth_churn(&[0.5], &[1.0], &[1], g1).unwrap(), 1.0);
        assert_eq!(smooth_churn(&[0.2, 0.7], &[0.2, 0.7], &[1, 0], g1).unwrap(), 0.0);
        assert!(SmoothChurnParams::new(0.0).is_err());
        assert_eq!(ramp_loss(0.05, 0.1), 0.5);
    }

    #[test]
    fn ambiguity_examples() {
        let one = PredictionMatrix::from_labels(&[vec![0, 1, 1]]).unwrap();
        assert_eq!(empirical_ambiguity(&one).unwrap(), 0.0);
        let pm = PredictionMatrix::from_labels(&[vec![0, 1], vec![1, 1]]).unwrap();
        assert_eq!(empirical_ambiguity(&pm).unwrap(), 0.5);
        let pm = PredictionMatrix::from_labels(&[vec![0, 1, 0], vec![1, 1, 0]]).unwrap();
        assert_eq!(rashomon_unstable_set(&pm), vec![0]);
        assert!(matches!(baseline_ambiguity(&pm, 2), Err(MetricsError::BadRowIndex { .. })));
        assert_eq!(discrepancy(&one, 0).unwrap().value, 0.0);
    }

    #[test]
    fn unstable_and_common_arbitrariness() {
        assert_eq!(churn_unstable_set(&[0, 1], &[1, 1]).unwrap(), vec![0]);
        assert_eq!(common_arbitrariness(&[1, 2, 3], &[2, 3]).value, 1.0);
        assert_eq!(common_arbitrariness(&[1], &[2, 3]).value, 0.0);
        let empty = common_arbitrariness(&[1], &[]);
        assert!(empty.empty_denominator && empty.value == 1.0);
    }

    #[test]
    fn bins_examples() {
        let bins = probability_flip_bins(&[0.1, 0.9, 0.5], &[], 10).unwrap();
        assert!(bins.iter().all(|b| b.flip_proportion == 0.0));
        let bins = probability_flip_bins(&[0.51, 0.52, 0.53, 0.54], &[0, 2], 10).unwrap();
        assert_eq!(bins[5].flip_proportion, 0.5);
        assert!(bins[0].empty);
        assert_eq!(bin_index(1.0, 20), 19);
        assert_eq!(bin_index(0.05, 20), 1);
        assert_eq!(bin_index(0.0, 20), 0);
    }

    #[test]
    fn curve_examples() {
        let u = [0.0, 0.1, 0.25, 0.2];
        let c = uncertainty_threshold_curve(&u, &[0, 1, 2], &[0.0, 0.26]).unwrap();
        assert_eq!(c[0].proportion, 1.0);
        assert_eq!(c[1].proportion, 0.0);
        let c = uncertainty_threshold_curve(&u, &[], &[0.0]).unwrap();
        assert!(c[0].undefined);
        let t = default_thresholds(50);
        assert_eq!((t[0], t[49], t.len()), (0.0, 0.25, 50));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert!(auc(&[0.1], &[1]).is_err());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let pm = PredictionMatrix::new(
            vec![vec![0.1, 1.0 / 3.0], vec![0.5, 0.999_999_999_999]],
            vec!["a".into(), "b".into()],
            vec!["base".into(), "seed_1".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        pm.write_csv(&mut buf).unwrap();
        assert_eq!(PredictionMatrix::read_csv(&buf[..]).unwrap(), pm);
        let js = serde_json::to_string(&pm).unwrap();
        assert_eq!(serde_json::from_str::<PredictionMatrix>(&js).unwrap(), pm);
        assert!(PredictionMatrix::from_scores(vec![vec![1.5]]).is_err());
        assert!(PredictionMatrix::from_scores(vec![vec![f64::NAN]]).is_err());
    }

    fn label_vec(s: usize) -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..=1, s)
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<u8>>> {
        (1usize..=6, 1usize..=12).prop_flat_map(|(m, s)| prop::collection::vec(label_vec(s), m))
    }

    proptest! {
        #[test]
        fn churn_is_a_pseudometric((a, b, c) in (1usize..=64).prop_flat_map(|s| (label_vec(s), label_vec(s), label_vec(s)))) {
            let ab = churn(&a, &b).unwrap();
            prop_assert_eq!(ab, churn(&b, &a).unwrap());
            prop_assert_eq!(churn(&a, &a).unwrap(), 0.0);
            // compare integer counts so the inequality is exact
            let n = a.len() as f64;
            let (ac, bc) = (churn(&a, &c).unwrap() * n, churn(&b, &c).unwrap() * n);
            prop_assert!(ac.round() <= (ab * n).round() + bc.round());
        }

        #[test]
        fn unstable_sets_match_rates(rows in matrix()) {
            let pm = PredictionMatrix::from_labels(&rows).unwrap();
            let u = rashomon_unstable_set(&pm);
            prop_assert_eq!(empirical_ambiguity(&pm).unwrap(), u.len() as f64 / pm.s() as f64);
            let a = &rows[0];
            let b = rows.last().unwrap();
            prop_assert_eq!(churn(a, b).unwrap(), churn_unstable_set(a, b).unwrap().len() as f64 / a.len() as f64);
            prop_assert!(discrepancy(&pm, 0).unwrap().value <= baseline_ambiguity(&pm, 0).unwrap());
        }

        #[test]
        fn ambiguity_monotone_in_members(rows in matrix(), extra in label_vec(12)) {
            let mut pm = PredictionMatrix::from_labels(&rows).unwrap();
            let before = empirical_ambiguity(&pm).unwrap();
            let base_before = baseline_ambiguity(&pm, 0).unwrap();
            let extra: Vec<f64> = extra[..pm.s()].iter().map(|&v| f64::from(v)).collect();
            pm.push("extra", extra).unwrap();
            prop_assert!(empirical_ambiguity(&pm).unwrap() >= before);
            prop_assert!(baseline_ambiguity(&pm, 0).unwrap() >= base_before);
        }

        #[test]
        fn curves_nonincreasing(u in prop::collection::vec(0.0f64..=0.25, 1..40), pick in prop::collection::vec(any::<bool>(), 40)) {
            let unstable: Vec<usize> = (0..u.len()).filter(|&i| pick[i]).collect();
            let c = uncertainty_threshold_curve(&u, &unstable, &default_thresholds(50)).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1].proportion <= w[0].proportion);
            }
        }

        #[test]
        fn auc_is_rank_invariant(scores in prop::collection::vec(0.0f64..1.0, 2..30), flip in any::<u64>()) {
            let y: Vec<u8> = (0..scores.len()).map(|i| ((flip >> (i % 64)) & 1) as u8).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let a = auc(&scores, &y).unwrap();
            let squashed: Vec<f64> = scores.iter().map(|s| s * s * 0.5).collect();
            prop_assert!((a - auc(&squashed, &y).unwrap()).abs() < 1e-12);
        }
    }
}
