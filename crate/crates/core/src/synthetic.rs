//! Planted open-set scenarios for end-to-end testing.
//!
//! A scenario fixes class frequencies, a known-class confusion matrix, the
//! absorption row of every unknown category, and a score distribution per
//! (method, group). [`generate`] turns it into an ordinary [`SampleSet`]
//! plus the planted [`ScoreTable`], so synthetic data flows through the same
//! code as real manifests.
//!
//! Per-split counts are deterministic (largest-remainder apportionment);
//! only closed-set predictions, scores, logits and features are random.

use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::communities::apportion;
use crate::ingest::{Group, GroupKind, SampleRecord, SampleSet, Split};
use crate::rng::{cumulative, SeededStream};
use crate::scoring::{ScoreRow, ScoreTable};

pub const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Location-scale score family. `LogNormal` draws `offset + exp(location + scale·Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScoreDist {
    Normal {
        location: f64,
        scale: f64,
    },
    LogNormal {
        location: f64,
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl ScoreDist {
    fn scale(&self) -> f64 {
        match *self {
            ScoreDist::Normal { scale, .. } | ScoreDist::LogNormal { scale, .. } => scale,
        }
    }

    fn sample(&self, rng: &mut SeededStream) -> f64 {
        match *self {
            ScoreDist::Normal { location, scale } => Normal::new(location, scale).expect("validated").sample(rng),
            ScoreDist::LogNormal { location, scale, offset } => {
                offset + LogNormal::new(location, scale).expect("validated").sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScoreModel {
    pub method: String,
    pub known: ScoreDist,
    pub target_unknown: ScoreDist,
    pub non_target_unknown: ScoreDist,
}

impl MethodScoreModel {
    fn dist(&self, g: GroupKind) -> &ScoreDist {
        match g {
            GroupKind::Known => &self.known,
            GroupKind::TargetUnknown => &self.target_unknown,
            GroupKind::NonTargetUnknown => &self.non_target_unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownCategory {
    pub name: String,
    pub group: GroupKind,
    /// Closed-set landing distribution over the K known classes.
    pub absorption: Vec<f64>,
    /// Share of the split's unknown samples.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub known_classes: Vec<String>,
    pub class_frequencies: Vec<f64>,
    /// Row k: closed-set prediction distribution for true class k.
    pub known_confusion: Vec<Vec<f64>>,
    pub unknown_categories: Vec<UnknownCategory>,
    pub score_models: Vec<MethodScoreModel>,
    pub val_unknown_fraction: f64,
    pub test_unknown_fraction: f64,
    /// Emit Gaussian-blob features (dimension K + unknown categories).
    #[serde(default)]
    pub emit_features: bool,
    pub seed: u64,
}

fn check_row(name: &str, row: &[f64], k: usize) -> Result<(), SyntheticError> {
    if row.len() != k {
        return Err(SyntheticError::Invalid(format!("{name}: expected {k} entries, got {}", row.len())));
    }
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(SyntheticError::Invalid(format!("{name}: entries must be finite and non-negative")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(SyntheticError::Invalid(format!("{name}: row sums to {sum}, not 1")));
    }
    Ok(())
}

impl SyntheticScenario {
    pub fn num_known(&self) -> usize {
        self.known_classes.len()
    }

    pub fn methods(&self) -> Vec<String> {
        self.score_models.iter().map(|m| m.method.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::Invalid(m));
        let k = self.num_known();
        if k == 0 {
            return bad("at least one known class required".into());
        }
        if self.known_classes.iter().collect::<BTreeSet<_>>().len() != k {
            return bad("known class names must be unique".into());
        }
        check_row("class_frequencies", &self.class_frequencies, k)?;
        if self.known_confusion.len() != k {
            return bad(format!("known_confusion needs {k} rows"));
        }
        for (i, row) in self.known_confusion.iter().enumerate() {
            check_row(&format!("known_confusion[{i}]"), row, k)?;
        }
        let mut names = BTreeSet::new();
        for u in &self.unknown_categories {
            if u.group == GroupKind::Known {
                return bad(format!("unknown category {} has group known", u.name));
            }
            if !names.insert(u.name.as_str()) || self.known_classes.contains(&u.name) {
                return bad(format!("duplicate category name {}", u.name));
            }
            check_row(&format!("absorption[{}]", u.name), &u.absorption, k)?;
            if !(u.weight.is_finite() && u.weight >= 0.0) {
                return bad(format!("weight of {} must be non-negative", u.name));
            }
        }
        for f in [self.val_unknown_fraction, self.test_unknown_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("unknown fraction {f} outside [0, 1]"));
            }
        }
        let has_unknown = self.val_unknown_fraction > 0.0 || self.test_unknown_fraction > 0.0;
        if has_unknown && self.unknown_categories.iter().map(|u| u.weight).sum::<f64>() <= 0.0 {
            return bad("unknown fraction > 0 needs unknown categories with positive weight".into());
        }
        if self.score_models.is_empty() {
            return bad("at least one score model required".into());
        }
        let mut methods = BTreeSet::new();
        for m in &self.score_models {
            if m.method.is_empty() || !methods.insert(m.method.as_str()) {
                return bad(format!("method names must be unique and non-empty ({:?})", m.method));
            }
            for g in GroupKind::ALL {
                let d = m.dist(g);
                let ok = d.scale() > 0.0
                    && d.scale().is_finite()
                    && match *d {
                        ScoreDist::Normal { location, .. } => location.is_finite(),
                        ScoreDist::LogNormal { location, offset, .. } => location.is_finite() && offset.is_finite(),
                    };
                if !ok {
                    return bad(format!("{}: {} score model needs finite location and scale > 0", m.method, g.as_str()));
                }
            }
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        self.num_known() + self.unknown_categories.len()
    }
}

const FEATURE_SEPARATION: f64 = 4.0;
const LOGIT_MARGIN: f64 = 0.5;

/// Logits whose argmax is `predicted`.
fn planted_logits(rng: &mut SeededStream, k: usize, predicted: usize) -> Vec<f64> {
    let mut z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
    let others = z
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != predicted)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap: f64 = StandardNormal.sample(rng);
    z[predicted] = if others.is_finite() {
        others + LOGIT_MARGIN + gap.abs()
    } else {
        z[predicted]
    };
    z
}

fn blob(rng: &mut SeededStream, dim: usize, center: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            let base = if d == center { FEATURE_SEPARATION } else { 0.0 };
            let z: f64 = StandardNormal.sample(rng);
            base + z
        })
        .collect()
}

fn split_stream(seed: u64, split: Split) -> SeededStream {
    let code = match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    };
    SeededStream::from_parts(seed, 0x5348_4e54_4845_5449, code)
}

struct Draw {
    record: SampleRecord,
    row: Option<ScoreRow>,
}

fn generate_split(scn: &SyntheticScenario, split: Split, n: usize) -> Vec<Draw> {
    let k = scn.num_known();
    let mut rng = split_stream(scn.seed, split);
    let fraction = match split {
        Split::Train => 0.0,
        Split::Val => scn.val_unknown_fraction,
        Split::Test => scn.test_unknown_fraction,
    };
    let n_unknown = crate::communities::round_half_even(fraction * n as f64).min(n);
    let known_counts = apportion(n - n_unknown, &scn.class_frequencies);
    let weights: Vec<f64> = scn.unknown_categories.iter().map(|u| u.weight).collect();
    let unknown_counts = apportion(n_unknown, &weights);
    let confusion: Vec<Vec<f64>> = scn.known_confusion.iter().map(|r| cumulative(r)).collect();
    let absorption: Vec<Vec<f64>> = scn.unknown_categories.iter().map(|u| cumulative(&u.absorption)).collect();
    let dim = scn.feature_dim();

    let mut out = Vec::with_capacity(n);
    let mut emit = |rng: &mut SeededStream, category: &str, group: Group, predicted: usize, center: usize| {
        let id = format!("{}-{:06}", split.as_str(), out.len());
        let logits = planted_logits(rng, k, predicted);
        let feature = scn.emit_features.then(|| blob(rng, dim, center));
        let row = (split != Split::Train).then(|| ScoreRow {
            sample_id: id.clone(),
            split,
            group: group.kind(),
            category: category.to_string(),
            predicted_class: predicted,
            scores: scn
                .score_models
                .iter()
                .map(|m| m.dist(group.kind()).sample(rng))
                .collect(),
        });
        out.push(Draw {
            record: SampleRecord {
                sample_id: id,
                split,
                category: category.to_string(),
                group,
                logits: Some(logits),
                feature,
            },
            row,
        });
    };
    for (c, &count) in known_counts.iter().enumerate() {
        for _ in 0..count {
            let predicted = rng.weighted_index(&confusion[c]);
            emit(&mut rng, &scn.known_classes[c], Group::Known { class_index: c }, predicted, c);
        }
    }
    for (u, &count) in unknown_counts.iter().enumerate() {
        let cat = &scn.unknown_categories[u];
        let group = match cat.group {
            GroupKind::TargetUnknown => Group::TargetUnknown,
            _ => Group::NonTargetUnknown,
        };
        for _ in 0..count {
            let predicted = rng.weighted_index(&absorption[u]);
            emit(&mut rng, &cat.name, group, predicted, k + u);
        }
    }
    out
}

/// Samples `n_per_split` records for each of train (known only), val and
/// test, and the planted score table over val ∪ test.
pub fn generate(scn: &SyntheticScenario, n_per_split: usize) -> Result<(SampleSet, ScoreTable), SyntheticError> {
    scn.validate()?;
    let splits: Vec<Vec<Draw>> = {
        use rayon::prelude::*;
        Split::ALL
            .par_iter()
            .map(|&s| generate_split(scn, s, n_per_split))
            .collect()
    };
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for d in splits.into_iter().flatten() {
        records.push(d.record);
        rows.extend(d.row);
    }
    let feature_dim = scn.emit_features.then(|| scn.feature_dim());
    let set = SampleSet::new(scn.known_classes.clone(), feature_dim, false, records)
        .map_err(|e| SyntheticError::Invalid(e.to_string()))?;
    let mut meta = BTreeMap::new();
    meta.insert("orientation".into(), "larger = more unknown (all methods)".into());
    meta.insert("source".into(), format!("synthetic scenario, seed {}", scn.seed));
    Ok((
        set,
        ScoreTable {
            methods: scn.methods(),
            rows,
            meta,
        },
    ))
}

/// Near-diagonal confusion: `1 − spread` on the diagonal, the rest uniform.
pub fn diagonal_confusion(k: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if k == 1 {
                        1.0
                    } else if i == j {
                        1.0 - spread
                    } else {
                        spread / (k - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Canned scenario whose sample-level optima over-reject knowns.
///
/// Known scores are log-normal, so a heavy right tail reaches into the
/// unknown score range; validation holds as many unknowns as knowns. Both
/// push F1- and recall-targeted thresholds low, while communities with at
/// most 40% unknowns are better served by rejecting less.
pub fn mismatch_scenario() -> SyntheticScenario {
    SyntheticScenario {
        known_classes: ["copepod", "diatom", "ciliate", "dinoflagellate", "radiolarian", "appendicularian"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        class_frequencies: vec![0.30, 0.25, 0.15, 0.12, 0.10, 0.08],
        known_confusion: diagonal_confusion(6, 0.06),
        unknown_categories: vec![
            UnknownCategory {
                name: "chaetognath".into(),
                group: GroupKind::TargetUnknown,
                absorption: vec![0.85, 0.15, 0.0, 0.0, 0.0, 0.0],
                weight: 0.35,
            },
            UnknownCategory {
                name: "foraminifera".into(),
                group: GroupKind::TargetUnknown,
                absorption: vec![0.0, 0.0, 0.1, 0.0, 0.9, 0.0],
                weight: 0.25,
            },
            UnknownCategory {
                name: "pteropod".into(),
                group: GroupKind::TargetUnknown,
                absorption: vec![0.0, 0.7, 0.0, 0.3, 0.0, 0.0],
                weight: 0.2,
            },
            UnknownCategory {
                name: "detritus".into(),
                group: GroupKind::NonTargetUnknown,
                absorption: vec![0.1, 0.3, 0.1, 0.1, 0.1, 0.3],
                weight: 0.2,
            },
        ],
        score_models: vec![
            MethodScoreModel {
                method: "mahalanobis".into(),
                known: ScoreDist::LogNormal {
                    location: 0.0,
                    scale: 1.0,
                    offset: 0.0,
                },
                target_unknown: ScoreDist::Normal {
                    location: 3.0,
                    scale: 0.6,
                },
                non_target_unknown: ScoreDist::Normal {
                    location: 2.6,
                    scale: 0.7,
                },
            },
            MethodScoreModel {
                method: "energy".into(),
                known: ScoreDist::Normal {
                    location: -8.0,
                    scale: 1.0,
                },
                target_unknown: ScoreDist::Normal {
                    location: -6.5,
                    scale: 1.0,
                },
                non_target_unknown: ScoreDist::Normal {
                    location: -7.0,
                    scale: 1.0,
                },
            },
        ],
        val_unknown_fraction: 0.5,
        test_unknown_fraction: 0.5,
        emit_features: false,
        seed: 42,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticScenario {
        let mut s = mismatch_scenario();
        s.emit_features = true;
        s
    }

    #[test]
    fn deterministic_and_counted() {
        let (a, ta) = generate(&small(), 200).unwrap();
        let (b, tb) = generate(&small(), 200).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.split(Split::Train).len(), 200);
        assert_eq!(ta.rows.len(), 400);
        let val_unknown = ta.rows_in(Split::Val).filter(|(_, r)| r.group.is_unknown()).count();
        assert_eq!(val_unknown, 100);
        assert!(a.split(Split::Train).iter().all(|&i| !a.records[i].group.is_unknown()));
        assert_eq!(a.feature_dim, Some(10));
    }

    #[test]
    fn logits_agree_with_planted_predictions() {
        let (s, t) = generate(&small(), 100).unwrap();
        let ids = t.id_index();
        for r in &s.records {
            if let Some(&row) = ids.get(r.sample_id.as_str()) {
                assert_eq!(crate::scoring::argmax(r.logits.as_ref().unwrap()), t.rows[row].predicted_class);
            }
        }
    }

    #[test]
    fn point_mass_absorption() {
        let mut s = small();
        s.unknown_categories[0].absorption = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (_, t) = generate(&s, 300).unwrap();
        assert!(t
            .rows
            .iter()
            .filter(|r| r.category == "chaetognath")
            .all(|r| r.predicted_class == 0));
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let mut s = small();
        s.known_confusion[2][0] += 0.01;
        assert!(s.validate().is_err());
        let mut s = small();
        s.unknown_categories[1].absorption.pop();
        assert!(s.validate().is_err());
        let mut s = small();
        s.score_models[0].known = ScoreDist::Normal {
            location: 0.0,
            scale: 0.0,
        };
        assert!(s.validate().is_err());
        let mut s = small();
        s.score_models[1].method = "mahalanobis".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn scenario_json_roundtrip() {
        let s = mismatch_scenario();
        let text = serde_json::to_string(&s).unwrap();
        let back: SyntheticScenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
