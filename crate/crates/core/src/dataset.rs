//! Tabular CSV ingestion, deterministic featurization, splits and update
//! regimes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{self, SeededRng};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found in header")]
    MissingTarget(String),
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("target must have exactly 2 distinct values, found {0:?}")]
    NonBinaryTarget(Vec<String>),
    #[error("positive label `{0}` does not occur in the target column")]
    UnknownPositiveLabel(String),
    #[error("table has no data rows")]
    EmptyTable,
    #[error("column `{column}` is declared numeric but row {row} holds `{value}`")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("split leaves an empty side ({train} train / {test} test)")]
    DegenerateSplit { train: usize, test: usize },
    #[error("dataset cache is malformed: {0}")]
    CacheFormat(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Ignore,
}

/// Which column is the target, how raw labels map to {0, 1}, and how each
/// feature column is typed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub target: String,
    /// Raw target value mapped to 1. When absent: "1" if the values are
    /// {"0", "1"}, otherwise the lexicographically larger value.
    #[serde(default)]
    pub positive_label: Option<String>,
    /// Explicit column kinds; columns not listed are inferred (numeric when
    /// every non-missing cell parses as a float).
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnKind>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into(), "NaN".into()]
}

impl SchemaConfig {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            positive_label: None,
            columns: BTreeMap::new(),
            missing_tokens: default_missing_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub target_column: String,
    pub target_index: usize,
    pub labels: LabelMapping,
    pub schema: SchemaConfig,
    pub source: String,
    /// SHA-256 of the raw file bytes.
    pub content_hash: String,
    pub dropped_missing_target: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn is_missing(&self, cell: &str) -> bool {
        self.schema.missing_tokens.iter().any(|t| t == cell)
    }

    pub fn label(&self, row: usize) -> u8 {
        u8::from(self.rows[row][self.target_index] == self.labels.positive)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<RawTable, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_csv(&bytes, &path.display().to_string(), schema)
}

/// Parse RFC-4180 CSV bytes with a header row.
pub fn parse_csv(bytes: &[u8], source: &str, schema: &SchemaConfig) -> Result<RawTable, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target_index = header
        .iter()
        .position(|h| h == &schema.target)
        .ok_or_else(|| DatasetError::MissingTarget(schema.target.clone()))?;

    let mut rows = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(DatasetError::RaggedRow { row: i, expected: header.len(), found: record.len() });
        }
        let row: Vec<String> = record.iter().map(str::to_owned).collect();
        if schema.missing_tokens.iter().any(|t| t == &row[target_index]) {
            dropped += 1;
            continue;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyTable);
    }

    let distinct: BTreeSet<&str> = rows.iter().map(|r| r[target_index].as_str()).collect();
    if distinct.len() != 2 {
        return Err(DatasetError::NonBinaryTarget(distinct.into_iter().map(str::to_owned).collect()));
    }
    let values: Vec<&str> = distinct.into_iter().collect();
    let positive = match &schema.positive_label {
        Some(p) if values.contains(&p.as_str()) => p.clone(),
        Some(p) => return Err(DatasetError::UnknownPositiveLabel(p.clone())),
        None => values[1].to_owned(),
    };
    let negative = values.iter().find(|v| **v != positive).map(|v| (*v).to_owned()).unwrap_or_default();

    Ok(RawTable {
        header,
        rows,
        target_column: schema.target.clone(),
        target_index,
        labels: LabelMapping { positive, negative },
        schema: schema.clone(),
        source: source.to_owned(),
        content_hash: hex::encode(Sha256::digest(bytes)),
        dropped_missing_target: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "yes")]
    pub drop_first: bool,
}

fn yes() -> bool {
    true
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { standardize: true, drop_first: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub content_hash: String,
    pub preprocessing_hash: String,
    pub labels: LabelMapping,
    pub dropped_columns: Vec<DroppedColumn>,
    pub dropped_rows_missing_target: usize,
    pub imputed_numeric_cells: usize,
    pub statistics_from: String,
    pub prng: String,
}

/// Featurized data: `x` is n × (d+1) with a leading column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of features excluding the intercept column.
    pub fn d(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.y[i]).collect()
    }

    /// Build a dataset from an already numeric feature matrix (no intercept);
    /// the intercept column is prepended.
    pub fn from_features(features: Array2<f64>, y: Vec<u8>, source: &str) -> Self {
        let (n, d) = features.dim();
        assert_eq!(n, y.len());
        let mut x = Array2::ones((n, d + 1));
        x.slice_mut(ndarray::s![.., 1..]).assign(&features);
        let mut hasher = Sha256::new();
        for v in x.iter() {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(&y);
        let hash = hex::encode(hasher.finalize());
        let mut feature_names = vec!["intercept".to_owned()];
        feature_names.extend((0..d).map(|j| format!("x{j}")));
        Dataset {
            x,
            y,
            feature_names,
            provenance: Provenance {
                source: source.to_owned(),
                content_hash: hash.clone(),
                preprocessing_hash: hash,
                labels: LabelMapping { positive: "1".into(), negative: "0".into() },
                dropped_columns: Vec::new(),
                dropped_rows_missing_target: 0,
                imputed_numeric_cells: 0,
                statistics_from: "none".into(),
                prng: rng::PRNG_ALGORITHM.into(),
            },
        }
    }
}

enum Encoder {
    Numeric { column: usize, median: f64, mean: f64, std: f64 },
    OneHot { column: usize, levels: Vec<String> },
}

const MISSING_LEVEL: &str = "missing";

/// Hash of everything `featurize` depends on; names the dataset cache file.
pub fn preprocessing_key(raw: &RawTable, config: &FeatureConfig, split: Option<&SplitSpec>) -> String {
    let mut h = Sha256::new();
    h.update(raw.content_hash.as_bytes());
    h.update(serde_json::to_vec(&raw.schema).expect("schema serializes"));
    h.update(serde_json::to_vec(config).expect("config serializes"));
    if let Some(s) = split {
        h.update(serde_json::to_vec(s).expect("split serializes"));
    }
    hex::encode(h.finalize())
}

/// One-hot (drop-first) categorical columns, impute and standardize numeric
/// columns, prepend the intercept. Statistics come from `split.train` when a
/// split is supplied, otherwise from all rows.
pub fn featurize(raw: &RawTable, config: &FeatureConfig, split: Option<&SplitSpec>) -> Result<Dataset, DatasetError> {
    let stat_rows: Vec<usize> = match split {
        Some(s) => s.train.clone(),
        None => (0..raw.n_rows()).collect(),
    };

    let mut encoders = Vec::new();
    let mut names = vec!["intercept".to_owned()];
    let mut dropped = Vec::new();

    for (col, name) in raw.header.iter().enumerate() {
        if col == raw.target_index {
            continue;
        }
        let kind = match raw.schema.columns.get(name) {
            Some(k) => *k,
            None => infer_kind(raw, col),
        };
        match kind {
            ColumnKind::Ignore => {}
            ColumnKind::Numeric => {
                let mut values = Vec::with_capacity(stat_rows.len());
                for &r in &stat_rows {
                    let cell = &raw.rows[r][col];
                    if raw.is_missing(cell) {
                        continue;
                    }
                    values.push(parse_numeric(name, r, cell)?);
                }
                // validate every row, not only the statistics rows
                for (r, row) in raw.rows.iter().enumerate() {
                    if !raw.is_missing(&row[col]) {
                        parse_numeric(name, r, &row[col])?;
                    }
                }
                if values.is_empty() {
                    tracing::warn!(column = %name, "numeric column has no observed values; dropped");
                    dropped.push(DroppedColumn { name: name.clone(), reason: "no observed values".into() });
                    continue;
                }
                let median = median(&mut values.clone());
                // statistics over imputed training column
                let n_missing = stat_rows.len() - values.len();
                values.extend(std::iter::repeat_n(median, n_missing));
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
                let std = var.sqrt();
                if std == 0.0 {
                    tracing::warn!(column = %name, "constant column dropped");
                    dropped.push(DroppedColumn { name: name.clone(), reason: "constant".into() });
                    continue;
                }
                names.push(name.clone());
                encoders.push(Encoder::Numeric { column: col, median, mean, std });
            }
            ColumnKind::Categorical => {
                let levels: BTreeSet<String> = stat_rows
                    .iter()
                    .map(|&r| {
                        let cell = &raw.rows[r][col];
                        if raw.is_missing(cell) { MISSING_LEVEL.to_owned() } else { cell.clone() }
                    })
                    .collect();
                if levels.len() < 2 {
                    tracing::warn!(column = %name, "constant column dropped");
                    dropped.push(DroppedColumn { name: name.clone(), reason: "constant".into() });
                    continue;
                }
                let mut levels: Vec<String> = levels.into_iter().collect();
                if config.drop_first {
                    levels.remove(0);
                }
                names.extend(levels.iter().map(|l| format!("{name}={l}")));
                encoders.push(Encoder::OneHot { column: col, levels });
            }
        }
    }

    let n = raw.n_rows();
    let mut x = Array2::zeros((n, names.len()));
    let mut imputed = 0;
    for (r, row) in raw.rows.iter().enumerate() {
        x[[r, 0]] = 1.0;
        let mut j = 1;
        for enc in &encoders {
            match enc {
                Encoder::Numeric { column, median, mean, std } => {
                    let cell = &row[*column];
                    let v = if raw.is_missing(cell) {
                        imputed += 1;
                        *median
                    } else {
                        parse_numeric(&raw.header[*column], r, cell)?
                    };
                    x[[r, j]] = if config.standardize { (v - mean) / std } else { v };
                    j += 1;
                }
                Encoder::OneHot { column, levels } => {
                    let cell = &row[*column];
                    let level = if raw.is_missing(cell) { MISSING_LEVEL } else { cell.as_str() };
                    if let Some(k) = levels.iter().position(|l| l == level) {
                        x[[r, j + k]] = 1.0;
                    }
                    j += levels.len();
                }
            }
        }
    }
    let y: Vec<u8> = (0..n).map(|r| raw.label(r)).collect();

    let statistics_from = match split {
        Some(s) => format!("train split (seed {}, test_fraction {})", s.seed, s.test_fraction),
        None => "all rows".to_owned(),
    };
    let preprocessing_hash = preprocessing_key(raw, config, split);

    Ok(Dataset {
        x,
        y,
        feature_names: names,
        provenance: Provenance {
            source: raw.source.clone(),
            content_hash: raw.content_hash.clone(),
            preprocessing_hash,
            labels: raw.labels.clone(),
            dropped_columns: dropped,
            dropped_rows_missing_target: raw.dropped_missing_target,
            imputed_numeric_cells: imputed,
            statistics_from,
            prng: rng::PRNG_ALGORITHM.into(),
        },
    })
}

fn infer_kind(raw: &RawTable, col: usize) -> ColumnKind {
    let numeric = raw
        .rows
        .iter()
        .map(|r| r[col].as_str())
        .filter(|c| !raw.is_missing(c))
        .all(|c| c.parse::<f64>().is_ok_and(f64::is_finite));
    if numeric { ColumnKind::Numeric } else { ColumnKind::Categorical }
}

fn parse_numeric(column: &str, row: usize, cell: &str) -> Result<f64, DatasetError> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DatasetError::NonNumeric { column: column.to_owned(), row, value: cell.to_owned() }),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
}

/// Seeded disjoint train/test partition of `0..n`; both sides sorted.
pub fn make_split(n: usize, test_fraction: f64, seed: u64) -> Result<SplitSpec, DatasetError> {
    let (train, test) = partition(&(0..n).collect::<Vec<_>>(), test_fraction, seed)?;
    Ok(SplitSpec { train, test, seed, test_fraction })
}

/// Partition an index list into (kept, held_out) with `round(fraction·len)`
/// held out.
pub fn partition(indices: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let n = indices.len();
    let n_out = (n as f64 * fraction).round() as usize;
    if n_out == 0 || n_out >= n {
        return Err(DatasetError::DegenerateSplit { train: n - n_out.min(n), test: n_out.min(n) });
    }
    let mut perm = indices.to_vec();
    SeededRng::new(seed, rng::stream::SPLIT).shuffle(&mut perm);
    let mut out = perm[..n_out].to_vec();
    let mut kept = perm[n_out..].to_vec();
    out.sort_unstable();
    kept.sort_unstable();
    Ok((kept, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Large,
    Small,
}

impl RegimeKind {
    pub fn default_fraction(self) -> f64 {
        match self {
            RegimeKind::Large => 0.5,
            RegimeKind::Small => 0.95,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Large => "large_update",
            RegimeKind::Small => "small_update",
        }
    }
}

/// Data perturbation defining an update: model A sees `fraction` of the
/// training rows, model B sees all of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRegime {
    pub kind: RegimeKind,
    pub fraction: f64,
    pub seed: u64,
}

impl UpdateRegime {
    pub fn large(seed: u64) -> Self {
        Self { kind: RegimeKind::Large, fraction: RegimeKind::Large.default_fraction(), seed }
    }

    pub fn small(seed: u64) -> Self {
        Self { kind: RegimeKind::Small, fraction: RegimeKind::Small.default_fraction(), seed }
    }
}

/// `floor(fraction·|train|)` training indices drawn without replacement,
/// returned sorted. `fraction == 1` returns the training set itself.
pub fn subsample_for_regime(split: &SplitSpec, regime: &UpdateRegime) -> Result<Vec<usize>, DatasetError> {
    if !(regime.fraction > 0.0 && regime.fraction <= 1.0) {
        return Err(DatasetError::InvalidFraction(regime.fraction));
    }
    if regime.fraction == 1.0 {
        return Ok(split.train.clone());
    }
    let k = ((regime.fraction * split.train.len() as f64) + 1e-9).floor() as usize;
    let mut picked = SeededRng::new(regime.seed, rng::stream::REGIME).sample(&split.train, k);
    picked.sort_unstable();
    Ok(picked)
}

// --- binary cache -----------------------------------------------------------
//
// Layout (little endian):
//   b"CLDSET01"
//   u64 header_len, header JSON {n, cols, feature_names, provenance}
//   n*cols f64, column-major
//   n u8 labels

const CACHE_MAGIC: &[u8; 8] = b"CLDSET01";

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    n: usize,
    cols: usize,
    feature_names: Vec<String>,
    provenance: Provenance,
}

pub fn cache_path(dir: &Path, preprocessing_hash: &str) -> PathBuf {
    dir.join(format!("dataset-{preprocessing_hash}.bin"))
}

pub fn write_cache(dataset: &Dataset, dir: &Path) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = cache_path(dir, &dataset.provenance.preprocessing_hash);
    let header = serde_json::to_vec(&CacheHeader {
        n: dataset.n(),
        cols: dataset.x.ncols(),
        feature_names: dataset.feature_names.clone(),
        provenance: dataset.provenance.clone(),
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(16 + header.len() + dataset.x.len() * 8 + dataset.n());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for col in dataset.x.columns() {
        for v in col {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&dataset.y);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(&buf).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_cache(path: &Path) -> Result<Dataset, DatasetError> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    let bad = |m: &str| DatasetError::CacheFormat(m.to_owned());
    if buf.len() < 16 || &buf[..8] != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let header: CacheHeader =
        serde_json::from_slice(buf.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| DatasetError::CacheFormat(e.to_string()))?;
    let body = &buf[16 + hlen..];
    if body.len() != header.n * header.cols * 8 + header.n {
        return Err(bad("body length mismatch"));
    }
    let mut x = Array2::zeros((header.n, header.cols));
    for (k, chunk) in body[..header.n * header.cols * 8].chunks_exact(8).enumerate() {
        x[[k % header.n, k / header.n]] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(Dataset {
        x,
        y: body[header.n * header.cols * 8..].to_vec(),
        feature_names: header.feature_names,
        provenance: header.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SchemaConfig {
        SchemaConfig::new("label")
    }

    #[test]
    fn toy_csv_maps_yes_to_one() {
        let t = parse_csv(b"a,label\n1,yes\n2,no\n", "toy", &schema()).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.labels.positive, "yes");
        assert_eq!(t.label(0), 1);
        assert_eq!(t.label(1), 0);
    }

    #[test]
    fn three_target_values_rejected() {
        let err = parse_csv(b"a,label\n1,x\n2,y\n3,z\n", "toy", &schema()).unwrap_err();
        assert!(matches!(err, DatasetError::NonBinaryTarget(v) if v.len() == 3));
    }

    #[test]
    fn missing_target_column() {
        let err = parse_csv(b"a,b\n1,2\n", "toy", &schema()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingTarget(_)));
    }

    #[test]
    fn ragged_row_reports_index() {
        let err = parse_csv(b"a,label\n1,yes\n2\n", "toy", &schema()).unwrap_err();
        assert!(matches!(err, DatasetError::RaggedRow { row: 1, .. }));
    }

    #[test]
    fn rows_with_missing_target_are_dropped() {
        let t = parse_csv(b"a,label\n1,yes\n2,?\n3,no\n", "toy", &schema()).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.dropped_missing_target, 1);
    }

    #[test]
    fn standardization_identity() {
        let t = parse_csv(b"a,label\n1,yes\n2,no\n3,yes\n", "toy", &schema()).unwrap();
        let d = featurize(&t, &FeatureConfig::default(), None).unwrap();
        let col = d.x.column(1);
        let mean = col.sum() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert!(d.x.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn test_rows_use_train_statistics() {
        let csv = b"a,label\n0,yes\n2,no\n4,yes\n100,no\n";
        let t = parse_csv(csv, "toy", &schema()).unwrap();
        let split = SplitSpec { train: vec![0, 1, 2], test: vec![3], seed: 0, test_fraction: 0.25 };
        let d = featurize(&t, &FeatureConfig::default(), Some(&split)).unwrap();
        let std = (8.0f64 / 3.0).sqrt();
        assert!((d.x[[3, 1]] - (100.0 - 2.0) / std).abs() < 1e-12);
    }

    #[test]
    fn one_hot_drop_first_and_missing_level() {
        let csv = b"c,k,label\nred,1,yes\nblue,1,no\n?,1,yes\n";
        let t = parse_csv(csv, "toy", &schema()).unwrap();
        let d = featurize(&t, &FeatureConfig::default(), None).unwrap();
        // levels sorted: blue, missing, red -> blue dropped; constant k dropped
        assert_eq!(d.feature_names, vec!["intercept", "c=missing", "c=red"]);
        assert_eq!(d.x.row(2).to_vec(), vec![1.0, 1.0, 0.0]);
        assert_eq!(d.provenance.dropped_columns[0].name, "k");
    }

    #[test]
    fn numeric_missing_imputed_with_median() {
        let csv = b"a,label\n1,yes\n?,no\n5,yes\n9,no\n";
        let t = parse_csv(csv, "toy", &schema()).unwrap();
        let cfg = FeatureConfig { standardize: false, drop_first: true };
        let d = featurize(&t, &cfg, None).unwrap();
        assert_eq!(d.x[[1, 1]], 5.0);
        assert_eq!(d.provenance.imputed_numeric_cells, 1);
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let a = make_split(10, 0.2, 0).unwrap();
        let b = make_split(10, 0.2, 0).unwrap();
        assert_eq!(a.train.len(), 8);
        assert_eq!(a.test.len(), 2);
        assert_eq!(a, b);
        let all: BTreeSet<usize> = a.train.iter().chain(&a.test).copied().collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn degenerate_split() {
        assert!(matches!(make_split(1, 0.5, 0), Err(DatasetError::DegenerateSplit { .. })));
        assert!(matches!(make_split(10, 1.5, 0), Err(DatasetError::InvalidFraction(_))));
    }

    #[test]
    fn regime_sizes() {
        let split = SplitSpec { train: (0..1000).collect(), test: vec![], seed: 0, test_fraction: 0.2 };
        assert_eq!(subsample_for_regime(&split, &UpdateRegime::large(1)).unwrap().len(), 500);
        let small = subsample_for_regime(&split, &UpdateRegime::small(1)).unwrap();
        assert_eq!(small.len(), 950);
        assert!(small.iter().all(|i| split.train.contains(i)));
        let full = UpdateRegime { kind: RegimeKind::Small, fraction: 1.0, seed: 9 };
        assert_eq!(subsample_for_regime(&split, &full).unwrap(), split.train);
    }

    #[test]
    fn cache_round_trip() {
        let t = parse_csv(b"a,c,label\n1,x,yes\n2,y,no\n3,x,yes\n", "toy", &schema()).unwrap();
        let d = featurize(&t, &FeatureConfig::default(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write_cache(&d, dir.path()).unwrap();
        assert_eq!(read_cache(&p).unwrap(), d);
    }
}
