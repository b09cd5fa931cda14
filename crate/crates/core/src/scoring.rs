//! Post-hoc OOD scores.
//!
//! All scores are oriented so that a larger value means stronger evidence
//! that a sample is unknown.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GroupKind, SampleSet, Split};

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("logits contain non-finite values")]
    NonFiniteLogits,
    #[error("empty logit vector")]
    EmptyLogits,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector cannot be normalized")]
    ZeroNorm,
    #[error("known class {0:?} has no train-split features")]
    EmptyClass(String),
    #[error("need more than K = {k} train features for a pooled covariance, got {n}")]
    InsufficientSamples { n: usize, k: usize },
    #[error("covariance contains non-finite entries")]
    NonFiniteCovariance,
    #[error("shrinkage must be finite and non-negative, got {0}")]
    InvalidShrinkage(f64),
    #[error("method {method} requires features; missing for samples {ids:?}")]
    MissingFeatures { method: String, ids: Vec<String> },
    #[error("method {method} requires logits; missing for samples {ids:?}")]
    MissingLogits { method: String, ids: Vec<String> },
    #[error("sample {id:?}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<ScoringError>,
    },
    #[error("unknown scoring method {0:?}")]
    UnknownMethod(String),
    #[error("score table line {line}: {message}")]
    TableParse { line: usize, message: String },
}

/// Index of the largest entry; first index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_logits(logits: &[f64]) -> Result<(), ScoringError> {
    if logits.is_empty() {
        return Err(ScoringError::EmptyLogits);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::NonFiniteLogits);
    }
    Ok(())
}

/// `log Σ exp(x)` via the max-subtraction identity.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, ScoringError> {
    check_logits(logits)?;
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Largest softmax probability.
pub fn max_softmax(logits: &[f64]) -> Result<f64, ScoringError> {
    check_logits(logits)?;
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // the max entry contributes exp(0) = 1
    let total: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    Ok(1.0 / total)
}

/// `1 − max softmax`, in `[0, 1 − 1/K]`.
pub fn msp_score(logits: &[f64]) -> Result<f64, ScoringError> {
    check_logits(logits)?;
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // 1 - 1/S = (S - 1)/S where S - 1 sums the non-max terms; avoids cancellation
    let mut rest = 0.0;
    let mut skipped = false;
    for &v in logits {
        if v == m && !skipped {
            skipped = true;
            continue;
        }
        rest += (v - m).exp();
    }
    Ok(rest / (1.0 + rest))
}

/// Energy score `−T · logsumexp(z / T)`.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64, ScoringError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(ScoringError::InvalidTemperature(temperature));
    }
    check_logits(logits)?;
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    Ok(-temperature * logsumexp(&scaled))
}

/// Per-class mean train features.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Vec<Vec<f64>>,
}

impl PrototypeSet {
    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    /// Class index of the nearest prototype (Euclidean), first wins ties.
    pub fn nearest(&self, feature: &[f64]) -> Result<usize, ScoringError> {
        self.check_dim(feature)?;
        let mut best = (0, f64::INFINITY);
        for (k, mu) in self.prototypes.iter().enumerate() {
            let d = squared_distance(feature, mu);
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }

    fn check_dim(&self, feature: &[f64]) -> Result<(), ScoringError> {
        if feature.len() != self.dim() {
            return Err(ScoringError::DimensionMismatch {
                expected: self.dim(),
                found: feature.len(),
            });
        }
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(a: &[f64]) -> Result<Vec<f64>, ScoringError> {
    let n = norm(a);
    if n == 0.0 {
        return Err(ScoringError::ZeroNorm);
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// Train-split known features grouped by class index.
fn train_features_by_class(s: &SampleSet) -> Vec<Vec<&[f64]>> {
    let mut by_class: Vec<Vec<&[f64]>> = vec![Vec::new(); s.num_known()];
    for &i in s.split(Split::Train) {
        let r = &s.records[i];
        if let (Some(k), Some(f)) = (r.group.class_index(), r.feature.as_deref()) {
            by_class[k].push(f);
        }
    }
    by_class
}

fn class_means(s: &SampleSet, by_class: &[Vec<&[f64]>]) -> Result<Vec<Vec<f64>>, ScoringError> {
    by_class
        .iter()
        .enumerate()
        .map(|(k, feats)| {
            if feats.is_empty() {
                return Err(ScoringError::EmptyClass(s.known_classes[k].clone()));
            }
            let d = feats[0].len();
            let mut mean = vec![0.0; d];
            for f in feats {
                for (m, x) in mean.iter_mut().zip(f.iter()) {
                    *m += x;
                }
            }
            let n = feats.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            Ok(mean)
        })
        .collect()
}

pub fn fit_prototypes(s: &SampleSet) -> Result<PrototypeSet, ScoringError> {
    let by_class = train_features_by_class(s);
    Ok(PrototypeSet {
        prototypes: class_means(s, &by_class)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeVariant {
    Raw,
    L2norm,
    Cosine,
}

/// Minimum distance from `feature` to any class prototype.
pub fn prototype_distance_score(
    feature: &[f64],
    protos: &PrototypeSet,
    variant: PrototypeVariant,
) -> Result<f64, ScoringError> {
    protos.check_dim(feature)?;
    let score = match variant {
        PrototypeVariant::Raw => protos
            .prototypes
            .iter()
            .map(|mu| squared_distance(feature, mu))
            .fold(f64::INFINITY, f64::min)
            .sqrt(),
        PrototypeVariant::L2norm => {
            let f = unit(feature)?;
            let mut best = f64::INFINITY;
            for mu in &protos.prototypes {
                best = best.min(squared_distance(&f, &unit(mu)?));
            }
            best.sqrt()
        }
        PrototypeVariant::Cosine => {
            let nf = norm(feature);
            if nf == 0.0 {
                return Err(ScoringError::ZeroNorm);
            }
            let mut best = f64::INFINITY;
            for mu in &protos.prototypes {
                let nm = norm(mu);
                if nm == 0.0 {
                    return Err(ScoringError::ZeroNorm);
                }
                let dot: f64 = feature.iter().zip(mu).map(|(a, b)| a * b).sum();
                best = best.min(1.0 - dot / (nf * nm));
            }
            best
        }
    };
    Ok(score)
}

/// Relative eigenvalue cutoff for the pseudo-inverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Default diagonal-loading strength (relative to the mean variance).
pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    pub prototypes: Vec<Vec<f64>>,
    pub precision: DMatrix<f64>,
    pub shrinkage: f64,
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix via eigendecomposition.
///
/// Eigenvalues at or below `rel_cutoff · max eigenvalue` are treated as zero.
pub fn symmetric_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_cutoff * max_eig;
    let mut out = DMatrix::zeros(n, n);
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff && lambda > 0.0 {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / lambda;
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Pooled within-class covariance with divisor `N − K`.
pub fn pooled_covariance(s: &SampleSet) -> Result<(Vec<Vec<f64>>, DMatrix<f64>), ScoringError> {
    let by_class = train_features_by_class(s);
    let means = class_means(s, &by_class)?;
    let d = means[0].len();
    let k = means.len();
    let n: usize = by_class.iter().map(Vec::len).sum();
    if n < 2 || n <= k {
        return Err(ScoringError::InsufficientSamples { n, k });
    }
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for (feats, mu) in by_class.iter().zip(&means) {
        for f in feats {
            let c = DVector::from_iterator(d, f.iter().zip(mu).map(|(x, m)| x - m));
            scatter += &c * c.transpose();
        }
    }
    let cov = scatter / (n - k) as f64;
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::NonFiniteCovariance);
    }
    Ok((means, cov))
}

/// Shared-covariance Mahalanobis model with diagonal loading
/// `Σ + λ · mean(diag Σ) · I`.
pub fn fit_mahalanobis(s: &SampleSet, shrinkage: f64) -> Result<MahalanobisModel, ScoringError> {
    if !(shrinkage >= 0.0) || !shrinkage.is_finite() {
        return Err(ScoringError::InvalidShrinkage(shrinkage));
    }
    let (prototypes, cov) = pooled_covariance(s)?;
    let d = cov.nrows();
    let tau = cov.diagonal().sum() / d as f64;
    let shrunk = cov + DMatrix::identity(d, d) * (shrinkage * tau);
    Ok(MahalanobisModel {
        prototypes,
        precision: symmetric_pinv(&shrunk, PINV_RELATIVE_CUTOFF),
        shrinkage,
    })
}

/// Minimum squared Mahalanobis distance; tiny negative round-off is clamped to 0.
pub fn mahalanobis_score(feature: &[f64], m: &MahalanobisModel) -> Result<f64, ScoringError> {
    let d = m.precision.nrows();
    if feature.len() != d {
        return Err(ScoringError::DimensionMismatch {
            expected: d,
            found: feature.len(),
        });
    }
    let mut best = f64::INFINITY;
    for mu in &m.prototypes {
        let diff = DVector::from_iterator(d, feature.iter().zip(mu).map(|(x, y)| x - y));
        let q = diff.dot(&(&m.precision * &diff));
        best = best.min(q);
    }
    Ok(best.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Msp,
    Energy,
    ProtoRaw,
    ProtoL2,
    ProtoCosine,
    Mahalanobis,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Msp,
        Method::Energy,
        Method::ProtoRaw,
        Method::ProtoL2,
        Method::ProtoCosine,
        Method::Mahalanobis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Msp => "msp",
            Method::Energy => "energy",
            Method::ProtoRaw => "proto_raw",
            Method::ProtoL2 => "proto_l2",
            Method::ProtoCosine => "proto_cosine",
            Method::Mahalanobis => "mahalanobis",
        }
    }

    pub fn needs_features(self) -> bool {
        !matches!(self, Method::Msp | Method::Energy)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ScoringError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub temperature: f64,
    pub shrinkage: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            shrinkage: DEFAULT_SHRINKAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub split: Split,
    pub group: GroupKind,
    pub category: String,
    pub predicted_class: usize,
    /// One score per method, parallel to [`ScoreTable::methods`].
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub rows: Vec<ScoreRow>,
    /// Free-form `key: value` metadata carried in the file's comment header.
    pub meta: BTreeMap<String, String>,
}

impl ScoreTable {
    pub fn method_index(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = (usize, &ScoreRow)> {
        self.rows.iter().enumerate().filter(move |(_, r)| r.split == split)
    }

    /// sample_id → row index
    pub fn id_index(&self) -> std::collections::HashMap<&str, usize> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.sample_id.as_str(), i))
            .collect()
    }

    /// Writes the table as tab-separated text with a `#` comment header.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# oscd score table v1")?;
        for (k, v) in &self.meta {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(&mut out);
        let mut header = vec![
            "sample_id".to_string(),
            "split".into(),
            "group".into(),
            "category".into(),
            "predicted_class".into(),
        ];
        header.extend(self.methods.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut fields = vec![
                r.sample_id.clone(),
                r.split.to_string(),
                r.group.to_string(),
                r.category.clone(),
                r.predicted_class.to_string(),
            ];
            fields.extend(r.scores.iter().map(|v| format_f64(*v)));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_tsv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn parse_tsv(text: &str) -> Result<Self, ScoringError> {
        let mut meta = BTreeMap::new();
        let mut body_start = 0;
        let mut comment_lines = 0;
        for line in text.split_inclusive('\n') {
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.trim().split_once(": ") {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                body_start += line.len();
                comment_lines += 1;
            } else {
                break;
            }
        }
        let err = |line: usize, message: String| ScoringError::TableParse {
            line: line + comment_lines,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(true)
            .from_reader(text[body_start..].as_bytes());
        let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
        const FIXED: [&str; 5] = ["sample_id", "split", "group", "category", "predicted_class"];
        if header.len() < FIXED.len() || FIXED.iter().zip(header.iter()).any(|(a, b)| *a != b) {
            return Err(err(1, format!("expected leading columns {FIXED:?}")));
        }
        let methods: Vec<String> = header.iter().skip(FIXED.len()).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| err(line, e.to_string()))?;
            if rec.len() != header.len() {
                return Err(err(line, format!("expected {} fields, got {}", header.len(), rec.len())));
            }
            let split = rec[1].parse::<Split>().map_err(|e| err(line, e))?;
            let group = rec[2].parse::<GroupKind>().map_err(|e| err(line, e))?;
            let predicted_class = rec[4]
                .parse::<usize>()
                .map_err(|e| err(line, format!("predicted_class: {e}")))?;
            let scores = rec
                .iter()
                .skip(FIXED.len())
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| err(line, format!("score {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(ScoreRow {
                sample_id: rec[0].to_string(),
                split,
                group,
                category: rec[3].to_string(),
                predicted_class,
                scores,
            });
        }
        Ok(ScoreTable { methods, rows, meta })
    }
}

/// Shortest round-trip decimal representation.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

enum Scorer {
    Msp,
    Energy(f64),
    Proto(PrototypeVariant),
    Mahalanobis,
}

/// Scores every val and test sample with the requested methods.
///
/// Feature-based methods require a feature vector on every scored sample;
/// missing ones are reported together. Predicted classes come from logits
/// when present and from the nearest raw prototype otherwise.
pub fn build_score_table(
    s: &SampleSet,
    methods: &[Method],
    params: &ScoreParams,
) -> Result<ScoreTable, ScoringError> {
    let indices: Vec<usize> = s
        .split(Split::Val)
        .iter()
        .chain(s.split(Split::Test))
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    for &m in methods {
        let missing: Vec<String> = indices
            .iter()
            .filter(|&&i| {
                let r = &s.records[i];
                if m.needs_features() {
                    r.feature.is_none()
                } else {
                    r.logits.is_none()
                }
            })
            .map(|&i| s.records[i].sample_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(if m.needs_features() {
                ScoringError::MissingFeatures {
                    method: m.name().into(),
                    ids: missing,
                }
            } else {
                ScoringError::MissingLogits {
                    method: m.name().into(),
                    ids: missing,
                }
            });
        }
    }

    let needs_protos = methods.iter().any(|m| m.needs_features())
        || indices.iter().any(|&i| s.records[i].logits.is_none());
    let protos = if needs_protos { Some(fit_prototypes(s)?) } else { None };
    let maha = if methods.contains(&Method::Mahalanobis) {
        Some(fit_mahalanobis(s, params.shrinkage)?)
    } else {
        None
    };
    if !(params.temperature > 0.0) {
        return Err(ScoringError::InvalidTemperature(params.temperature));
    }
    let scorers: Vec<Scorer> = methods
        .iter()
        .map(|m| match m {
            Method::Msp => Scorer::Msp,
            Method::Energy => Scorer::Energy(params.temperature),
            Method::ProtoRaw => Scorer::Proto(PrototypeVariant::Raw),
            Method::ProtoL2 => Scorer::Proto(PrototypeVariant::L2norm),
            Method::ProtoCosine => Scorer::Proto(PrototypeVariant::Cosine),
            Method::Mahalanobis => Scorer::Mahalanobis,
        })
        .collect();

    let rows = indices
        .par_iter()
        .map(|&i| {
            let r = &s.records[i];
            let wrap = |e: ScoringError| ScoringError::Sample {
                id: r.sample_id.clone(),
                source: Box::new(e),
            };
            let predicted_class = match (&r.logits, &protos) {
                (Some(z), _) => argmax(z),
                (None, Some(p)) => p.nearest(r.feature.as_deref().unwrap_or(&[])).map_err(wrap)?,
                (None, None) => unreachable!("prototypes are fitted when logits are missing"),
            };
            let scores = scorers
                .iter()
                .map(|sc| {
                    let logits = || r.logits.as_deref().expect("checked above");
                    let feature = || r.feature.as_deref().expect("checked above");
                    match sc {
                        Scorer::Msp => msp_score(logits()),
                        Scorer::Energy(t) => energy_score(logits(), *t),
                        Scorer::Proto(v) => {
                            prototype_distance_score(feature(), protos.as_ref().expect("fitted"), *v)
                        }
                        Scorer::Mahalanobis => mahalanobis_score(feature(), maha.as_ref().expect("fitted")),
                    }
                    .map_err(wrap)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ScoreRow {
                sample_id: r.sample_id.clone(),
                split: r.split,
                group: r.group.kind(),
                category: r.category.clone(),
                predicted_class,
                scores,
            })
        })
        .collect::<Result<Vec<_>, ScoringError>>()?;

    let mut meta = BTreeMap::new();
    meta.insert("orientation".into(), "larger = more unknown (all methods)".into());
    meta.insert("energy".into(), format!("-T*logsumexp(z/T), T={}", format_f64(params.temperature)));
    meta.insert(
        "mahalanobis".into(),
        format!(
            "pooled covariance (N-K), loading lambda={} x mean variance, pinv cutoff {:e}",
            format_f64(params.shrinkage),
            PINV_RELATIVE_CUTOFF
        ),
    );
    Ok(ScoreTable {
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        rows,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msp_uniform_logits() {
        let v = msp_score(&[0.3; 4]).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn msp_saturates() {
        assert!(msp_score(&[1000.0, 0.0]).unwrap() < 1e-300);
    }

    #[test]
    fn msp_rejects_non_finite() {
        assert_eq!(msp_score(&[f64::NAN, 1.0]), Err(ScoringError::NonFiniteLogits));
        assert_eq!(msp_score(&[]), Err(ScoringError::EmptyLogits));
    }

    #[test]
    fn energy_closed_forms() {
        let e = energy_score(&[0.0, 0.0], 1.0).unwrap();
        assert!((e + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(energy_score(&[3.5], 1.0).unwrap(), -3.5);
        assert!(matches!(energy_score(&[1.0], 0.0), Err(ScoringError::InvalidTemperature(_))));
        assert!(matches!(energy_score(&[1.0], -1.0), Err(ScoringError::InvalidTemperature(_))));
    }

    #[test]
    fn energy_does_not_overflow() {
        let e = energy_score(&[700.0, 700.0, 700.0], 1.0).unwrap();
        assert!(e.is_finite());
    }

    #[test]
    fn prototype_zero_when_on_prototype() {
        let p = PrototypeSet {
            prototypes: vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
        };
        assert_eq!(prototype_distance_score(&[-1.0, 0.5], &p, PrototypeVariant::Raw).unwrap(), 0.0);
    }

    #[test]
    fn cosine_orthogonal_is_one() {
        let p = PrototypeSet {
            prototypes: vec![vec![1.0, 0.0]],
        };
        let s = prototype_distance_score(&[0.0, 1.0], &p, PrototypeVariant::Cosine).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_is_flagged() {
        let p = PrototypeSet {
            prototypes: vec![vec![1.0, 0.0]],
        };
        for v in [PrototypeVariant::L2norm, PrototypeVariant::Cosine] {
            assert_eq!(prototype_distance_score(&[0.0, 0.0], &p, v), Err(ScoringError::ZeroNorm));
        }
        // raw distance has no normalization step
        assert!(prototype_distance_score(&[0.0, 0.0], &p, PrototypeVariant::Raw).is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        let p = PrototypeSet {
            prototypes: vec![vec![1.0, 0.0]],
        };
        assert!(matches!(
            prototype_distance_score(&[1.0], &p, PrototypeVariant::Raw),
            Err(ScoringError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn pinv_of_zero_matrix_is_zero() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(symmetric_pinv(&z, PINV_RELATIVE_CUTOFF), z);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("odin".parse::<Method>().is_err());
    }

    #[test]
    fn score_table_tsv_roundtrip() {
        let mut meta = BTreeMap::new();
        meta.insert("tool".to_string(), "oscd 0.1.0".to_string());
        let t = ScoreTable {
            methods: vec!["msp".into(), "energy".into()],
            rows: vec![ScoreRow {
                sample_id: "s 1".into(),
                split: Split::Test,
                group: GroupKind::NonTargetUnknown,
                category: "bubbles".into(),
                predicted_class: 3,
                scores: vec![0.1 + 0.2, -1e-300],
            }],
            meta,
        };
        let back = ScoreTable::parse_tsv(&t.to_tsv_string()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn score_table_rejects_bad_rows() {
        let text = "sample_id\tsplit\tgroup\tcategory\tpredicted_class\tmsp\na\tval\tknown\tc\t0\tnope\n";
        assert!(matches!(
            ScoreTable::parse_tsv(text),
            Err(ScoringError::TableParse { line: 2, .. })
        ));
        assert!(ScoreTable::parse_tsv("x\ty\n").is_err());
    }
}
