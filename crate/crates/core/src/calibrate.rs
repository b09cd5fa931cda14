//! Threshold grids, metric scans and threshold selection.
//!
//! Decisions use `score > t → unknown`, otherwise the closed-set class. The
//! grid ascends, so a higher grid index means less rejection. Every argmin
//! and argmax breaks ties toward the lowest grid index.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::communities::{CommunitySuite, Setting};
use crate::community_metrics::{
    evaluate_abundances, AbundanceVector, CommunityMetricBundle, CommunityMetricError, MetricOptions,
};
use crate::ingest::{SampleSet, Split};
use crate::sample_metrics::{BinaryScoredSet, SortedScores, ThresholdedConfusion};
use crate::scoring::{format_f64, ScoreTable};

pub const DEFAULT_QUANTILES: usize = 401;
pub const TARGET_KNOWN_RECALL: f64 = 0.95;
pub const TARGET_UNKNOWN_RECALL: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrateError {
    #[error("no scores to build a grid from")]
    EmptyScores,
    #[error("quantile count must be at least 2")]
    TooFewQuantiles,
    #[error("method {0:?} not in score table")]
    MethodAbsent(String),
    #[error("sample {0:?} in community suite has no score row")]
    MissingSample(String),
    #[error("sample {id:?} predicted class {class} but K = {k}")]
    PredictedClass { id: String, class: usize, k: usize },
    #[error("suite split mismatch: expected {expected}, found {found}")]
    SplitMismatch { expected: Split, found: Split },
    #[error("{side} community suite is empty")]
    EmptySuite { side: &'static str },
    #[error("{strategy} needs unknown validation samples but none exist")]
    NoValidationUnknowns { strategy: String },
    #[error("{strategy} needs validation communities containing unknowns but none do")]
    NoValidationCommunityUnknowns { strategy: String },
    #[error("strategy infeasible: {strategy}: {reason}")]
    Infeasible { strategy: String, reason: String },
    #[error("setting {0} not present in scan")]
    UnknownSetting(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Metric(#[from] CommunityMetricError),
}

/// Which scores the grid quantiles come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileSource {
    #[default]
    Validation,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub thresholds: Vec<f64>,
    pub source_method: String,
    pub grid_size: usize,
    pub n_quantiles: usize,
    pub quantile_source: QuantileSource,
}

/// Type-7 quantile of an ascending slice: `x[j] + (h − j)(x[j+1] − x[j])`
/// with `h = (n − 1) q`.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let j = h.floor() as usize;
    if j + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - j as f64;
    sorted[j] + frac * (sorted[j + 1] - sorted[j])
}

/// Quantiles at `i / (n − 1)` for `i = 0..n`, plus the extrema, deduplicated
/// and ascending.
pub fn build_grid(scores: &[f64], n_quantiles: usize) -> Result<Vec<f64>, CalibrateError> {
    if scores.is_empty() {
        return Err(CalibrateError::EmptyScores);
    }
    if n_quantiles < 2 {
        return Err(CalibrateError::TooFewQuantiles);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = (0..n_quantiles)
        .map(|i| quantile_type7(&sorted, i as f64 / (n_quantiles - 1) as f64))
        .collect();
    grid.push(sorted[0]);
    grid.push(sorted[sorted.len() - 1]);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Grid for `method` from the validation (or pooled val + test) scores.
pub fn grid_for_method(
    table: &ScoreTable,
    method: &str,
    source: QuantileSource,
    n_quantiles: usize,
) -> Result<ThresholdGrid, CalibrateError> {
    let m = table
        .method_index(method)
        .ok_or_else(|| CalibrateError::MethodAbsent(method.to_string()))?;
    let scores: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| match source {
            QuantileSource::Validation => r.split == Split::Val,
            QuantileSource::Pooled => r.split != Split::Train,
        })
        .map(|r| r.scores[m])
        .collect();
    let thresholds = build_grid(&scores, n_quantiles)?;
    Ok(ThresholdGrid {
        grid_size: thresholds.len(),
        thresholds,
        source_method: method.to_string(),
        n_quantiles,
        quantile_source: source,
    })
}

/// One community with members resolved to (score, closed-set class), sorted
/// by ascending score.
#[derive(Debug, Clone)]
struct ScoredCommunity {
    scores: Vec<f64>,
    classes: Vec<usize>,
    true_abundance: AbundanceVector,
    has_unknown: bool,
    setting: usize,
}

impl ScoredCommunity {
    fn counts_at(&self, k: usize, threshold: f64) -> Vec<usize> {
        let known = self.scores.partition_point(|&s| s <= threshold);
        let mut counts = vec![0usize; k + 1];
        for &c in &self.classes[..known] {
            counts[c] += 1;
        }
        counts[k] = self.scores.len() - known;
        counts
    }

    fn bundle_at(&self, k: usize, threshold: f64, opts: &MetricOptions) -> Result<CommunityMetricBundle, CalibrateError> {
        let phat = AbundanceVector::from_counts(&self.counts_at(k, threshold));
        Ok(evaluate_abundances(&self.true_abundance, &phat, opts)?)
    }

    /// Bundles at every grid threshold by one pass over the sorted members.
    fn sweep(&self, k: usize, grid: &[f64], opts: &MetricOptions) -> Result<Vec<CommunityMetricBundle>, CalibrateError> {
        let mut counts = vec![0usize; k + 1];
        counts[k] = self.scores.len();
        let mut next = 0;
        let mut out = Vec::with_capacity(grid.len());
        for &t in grid {
            while next < self.scores.len() && self.scores[next] <= t {
                counts[self.classes[next]] += 1;
                counts[k] -= 1;
                next += 1;
            }
            let phat = AbundanceVector::from_counts(&counts);
            out.push(evaluate_abundances(&self.true_abundance, &phat, opts)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Val,
    Test,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Val => "val",
            Side::Test => "test",
        }
    }
}

/// Everything a scan needs, resolved once: per-split sample scores and
/// per-community member scores for one method.
#[derive(Debug, Clone)]
pub struct ScanInputs {
    pub method: String,
    pub num_known: usize,
    pub options: MetricOptions,
    /// Settings in first-appearance order over the test then val suite.
    pub settings: Vec<Setting>,
    val_samples: SortedScores,
    test_samples: SortedScores,
    val: Vec<ScoredCommunity>,
    test: Vec<ScoredCommunity>,
}

fn resolve_suite(
    suite: &CommunitySuite,
    expected: Split,
    samples: &SampleSet,
    table: &ScoreTable,
    ids: &HashMap<&str, usize>,
    m: usize,
    settings: &mut Vec<Setting>,
) -> Result<Vec<ScoredCommunity>, CalibrateError> {
    if suite.split != expected {
        return Err(CalibrateError::SplitMismatch {
            expected,
            found: suite.split,
        });
    }
    let k = samples.num_known();
    let mut out = Vec::with_capacity(suite.communities.len());
    for c in &suite.communities {
        let mut pairs = Vec::with_capacity(c.members.len());
        for &i in &c.members {
            let rec = &samples.records[i];
            if rec.split != expected {
                return Err(CalibrateError::SplitMismatch {
                    expected,
                    found: rec.split,
                });
            }
            let &row = ids
                .get(rec.sample_id.as_str())
                .ok_or_else(|| CalibrateError::MissingSample(rec.sample_id.clone()))?;
            let r = &table.rows[row];
            if r.predicted_class >= k {
                return Err(CalibrateError::PredictedClass {
                    id: r.sample_id.clone(),
                    class: r.predicted_class,
                    k,
                });
            }
            pairs.push((r.scores[m], r.predicted_class));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let setting = c.setting();
        let idx = match settings.iter().position(|s| *s == setting) {
            Some(i) => i,
            None => {
                settings.push(setting);
                settings.len() - 1
            }
        };
        out.push(ScoredCommunity {
            scores: pairs.iter().map(|p| p.0).collect(),
            classes: pairs.iter().map(|p| p.1).collect(),
            has_unknown: c.true_abundance.unknown() > 0.0,
            true_abundance: c.true_abundance.clone(),
            setting: idx,
        });
    }
    Ok(out)
}

fn sorted_split(table: &ScoreTable, m: usize, split: Split) -> SortedScores {
    let (scores, unk): (Vec<f64>, Vec<bool>) = table
        .rows_in(split)
        .map(|(_, r)| (r.scores[m], r.group.is_unknown()))
        .unzip();
    SortedScores::new(&BinaryScoredSet {
        scores,
        is_unknown: unk,
    })
}

impl ScanInputs {
    pub fn new(
        table: &ScoreTable,
        samples: &SampleSet,
        method: &str,
        val_suite: &CommunitySuite,
        test_suite: &CommunitySuite,
        options: MetricOptions,
    ) -> Result<Self, CalibrateError> {
        let m = table
            .method_index(method)
            .ok_or_else(|| CalibrateError::MethodAbsent(method.to_string()))?;
        if val_suite.communities.is_empty() {
            return Err(CalibrateError::EmptySuite { side: "val" });
        }
        if test_suite.communities.is_empty() {
            return Err(CalibrateError::EmptySuite { side: "test" });
        }
        let ids = table.id_index();
        let mut settings = Vec::new();
        let test = resolve_suite(test_suite, Split::Test, samples, table, &ids, m, &mut settings)?;
        let val = resolve_suite(val_suite, Split::Val, samples, table, &ids, m, &mut settings)?;
        Ok(Self {
            method: method.to_string(),
            num_known: samples.num_known(),
            options,
            settings,
            val_samples: sorted_split(table, m, Split::Val),
            test_samples: sorted_split(table, m, Split::Test),
            val,
            test,
        })
    }

    fn side(&self, side: Side) -> &[ScoredCommunity] {
        match side {
            Side::Val => &self.val,
            Side::Test => &self.test,
        }
    }

    pub fn community_count(&self, side: Side) -> usize {
        self.side(side).len()
    }

    pub fn sample_confusion(&self, side: Side, threshold: f64) -> ThresholdedConfusion {
        match side {
            Side::Val => self.val_samples.confusion_at(threshold),
            Side::Test => self.test_samples.confusion_at(threshold),
        }
    }

    /// Per-community bundles at an arbitrary threshold, in suite order.
    pub fn community_bundles(&self, side: Side, threshold: f64) -> Result<Vec<CommunityMetricBundle>, CalibrateError> {
        self.side(side)
            .iter()
            .map(|c| c.bundle_at(self.num_known, threshold, &self.options))
            .collect()
    }

    /// Setting label of each community on `side`, in suite order.
    pub fn community_settings(&self, side: Side) -> Vec<Setting> {
        self.side(side).iter().map(|c| self.settings[c.setting]).collect()
    }

    fn row_at(&self, threshold: f64, val: &[&CommunityMetricBundle], test: &[&CommunityMetricBundle]) -> ScanRow {
        let per_setting = |side: Side, bundles: &[&CommunityMetricBundle]| -> Vec<Option<CommunityMetricBundle>> {
            let comms = self.side(side);
            (0..self.settings.len())
                .map(|s| {
                    CommunityMetricBundle::mean(
                        comms
                            .iter()
                            .zip(bundles)
                            .filter(|(c, _)| c.setting == s)
                            .map(|(_, b)| *b),
                    )
                })
                .collect()
        };
        ScanRow {
            threshold,
            val_confusion: self.val_samples.confusion_at(threshold),
            test_confusion: self.test_samples.confusion_at(threshold),
            val_mean: CommunityMetricBundle::mean(val.iter().copied()).expect("non-empty val suite"),
            test_mean: CommunityMetricBundle::mean(test.iter().copied()).expect("non-empty test suite"),
            val_by_setting: per_setting(Side::Val, val),
            test_by_setting: per_setting(Side::Test, test),
        }
    }

    /// Row at a single threshold, computed directly.
    pub fn evaluate_at(&self, threshold: f64) -> Result<ScanRow, CalibrateError> {
        let val = self.community_bundles(Side::Val, threshold)?;
        let test = self.community_bundles(Side::Test, threshold)?;
        Ok(self.row_at(threshold, &val.iter().collect::<Vec<_>>(), &test.iter().collect::<Vec<_>>()))
    }

    /// Closed-set reference: no sample is rejected.
    pub fn closed_set_baseline(&self) -> Result<ScanRow, CalibrateError> {
        self.evaluate_at(f64::INFINITY)
    }

    pub fn scan(&self, grid: &ThresholdGrid) -> Result<ScanTable, CalibrateError> {
        let sweep = |comms: &[ScoredCommunity]| -> Result<Vec<Vec<CommunityMetricBundle>>, CalibrateError> {
            comms
                .par_iter()
                .map(|c| c.sweep(self.num_known, &grid.thresholds, &self.options))
                .collect()
        };
        let val = sweep(&self.val)?;
        let test = sweep(&self.test)?;
        let rows = (0..grid.thresholds.len())
            .into_par_iter()
            .map(|g| {
                let v: Vec<&CommunityMetricBundle> = val.iter().map(|c| &c[g]).collect();
                let t: Vec<&CommunityMetricBundle> = test.iter().map(|c| &c[g]).collect();
                self.row_at(grid.thresholds[g], &v, &t)
            })
            .collect();
        Ok(ScanTable {
            method: self.method.clone(),
            grid: grid.clone(),
            settings: self.settings.clone(),
            val_communities: self.val.len(),
            test_communities: self.test.len(),
            val_has_unknown_samples: self.val_samples.num_unknown() > 0,
            val_has_unknown_communities: self.val.iter().any(|c| c.has_unknown),
            val_setting_has_unknown: (0..self.settings.len())
                .map(|s| self.val.iter().any(|c| c.setting == s && c.has_unknown))
                .collect(),
            rows,
            baseline: self.closed_set_baseline()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub threshold: f64,
    pub val_confusion: ThresholdedConfusion,
    pub test_confusion: ThresholdedConfusion,
    pub val_mean: CommunityMetricBundle,
    pub test_mean: CommunityMetricBundle,
    /// Indexed like [`ScanTable::settings`]; `None` where the suite lacks the setting.
    pub val_by_setting: Vec<Option<CommunityMetricBundle>>,
    pub test_by_setting: Vec<Option<CommunityMetricBundle>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanTable {
    pub method: String,
    pub grid: ThresholdGrid,
    pub settings: Vec<Setting>,
    pub val_communities: usize,
    pub test_communities: usize,
    pub val_has_unknown_samples: bool,
    pub val_has_unknown_communities: bool,
    pub val_setting_has_unknown: Vec<bool>,
    pub rows: Vec<ScanRow>,
    pub baseline: ScanRow,
}

fn confusion_columns(prefix: &str) -> Vec<String> {
    ["tp", "fp", "tn", "fn", "known_recall", "unknown_recall", "detection_f1", "youden"]
        .iter()
        .map(|c| format!("{prefix}_{c}"))
        .collect()
}

fn confusion_values(c: &ThresholdedConfusion) -> Vec<String> {
    vec![
        c.tp.to_string(),
        c.fp.to_string(),
        c.tn.to_string(),
        c.fn_.to_string(),
        format_f64(c.known_recall),
        format_f64(c.unknown_recall),
        format_f64(c.detection_f1),
        format_f64(c.youden),
    ]
}

fn bundle_values(b: Option<&CommunityMetricBundle>) -> Vec<String> {
    match b {
        Some(b) => b.values().iter().map(|&v| format_f64(v)).collect(),
        None => vec![String::new(); CommunityMetricBundle::FIELDS.len()],
    }
}

impl ScanTable {
    pub fn setting_index(&self, setting: &Setting) -> Option<usize> {
        self.settings.iter().position(|s| s == setting)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["grid_index".to_string(), "threshold".to_string()];
        h.extend(confusion_columns("val"));
        h.extend(confusion_columns("test"));
        for side in ["val", "test"] {
            h.extend(CommunityMetricBundle::FIELDS.iter().map(|f| format!("{side}_{f}")));
        }
        for side in ["val", "test"] {
            for s in &self.settings {
                h.extend(
                    CommunityMetricBundle::FIELDS
                        .iter()
                        .map(|f| format!("{side}[{}]_{f}", s.label())),
                );
            }
        }
        h
    }

    fn record(&self, index: &str, r: &ScanRow) -> Vec<String> {
        let mut v = vec![index.to_string(), format_f64(r.threshold)];
        v.extend(confusion_values(&r.val_confusion));
        v.extend(confusion_values(&r.test_confusion));
        v.extend(bundle_values(Some(&r.val_mean)));
        v.extend(bundle_values(Some(&r.test_mean)));
        for b in r.val_by_setting.iter().chain(&r.test_by_setting) {
            v.extend(bundle_values(b.as_ref()));
        }
        v
    }

    /// Wide tab-separated export; the closed-set baseline is the final row
    /// with grid index `closed_set`.
    pub fn write_tsv<W: Write>(&self, mut out: W, meta: &[(String, String)]) -> std::io::Result<()> {
        writeln!(out, "# oscd scan table v1")?;
        writeln!(out, "# method: {}", self.method)?;
        writeln!(out, "# quantile_source: {:?}", self.grid.quantile_source)?;
        writeln!(out, "# val_communities: {}", self.val_communities)?;
        writeln!(out, "# test_communities: {}", self.test_communities)?;
        for (k, v) in meta {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
        w.write_record(self.header())?;
        for (g, r) in self.rows.iter().enumerate() {
            w.write_record(self.record(&g.to_string(), r))?;
        }
        w.write_record(self.record("closed_set", &self.baseline))?;
        w.flush()?;
        Ok(())
    }
}

/// Ecological target for objective-aware selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Oscd,
    MeanAbsAbundanceError,
    ShannonError,
    SimpsonError,
    PielouError,
    RichnessError,
    TopkOverlapMax,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::Oscd,
        Objective::MeanAbsAbundanceError,
        Objective::ShannonError,
        Objective::SimpsonError,
        Objective::PielouError,
        Objective::RichnessError,
        Objective::TopkOverlapMax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Oscd => "oscd",
            Objective::MeanAbsAbundanceError => "mean_abs_abundance_error",
            Objective::ShannonError => "shannon_error",
            Objective::SimpsonError => "simpson_error",
            Objective::PielouError => "pielou_error",
            Objective::RichnessError => "richness_error",
            Objective::TopkOverlapMax => "topk_overlap_max",
        }
    }

    /// Value to minimize.
    fn loss(self, b: &CommunityMetricBundle) -> f64 {
        match self {
            Objective::Oscd => b.oscd,
            Objective::MeanAbsAbundanceError => b.mean_abs_abundance_error,
            Objective::ShannonError => b.shannon_error,
            Objective::SimpsonError => b.simpson_error,
            Objective::PielouError => b.pielou_error,
            Objective::RichnessError => b.richness_error,
            Objective::TopkOverlapMax => -b.topk_overlap,
        }
    }

    pub fn value(self, b: &CommunityMetricBundle) -> f64 {
        match self {
            Objective::TopkOverlapMax => b.topk_overlap,
            _ => self.loss(b),
        }
    }
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown objective {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    FixedRecall95,
    DetectionF1Max,
    YoudenMax,
    FprAt95UnknownRecall,
    /// Minimum mean OSCD over all validation communities.
    CommunityAwareOscd,
    /// Minimum mean OSCD over validation communities of one setting; falls
    /// back to the global rule when that setting has no val communities.
    CommunityAwareSetting(Setting),
    ObjectiveAware(Objective),
    OracleGlobal,
    OracleSetting(Setting),
}

/// Strategy names without their setting or objective argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyFamily {
    FixedRecall95,
    DetectionF1Max,
    YoudenMax,
    FprAt95UnknownRecall,
    CommunityAwareOscd,
    CommunityAwareSetting,
    ObjectiveAware,
    OracleGlobal,
    OracleSetting,
}

impl StrategyFamily {
    pub const ALL: [StrategyFamily; 9] = [
        StrategyFamily::FixedRecall95,
        StrategyFamily::DetectionF1Max,
        StrategyFamily::YoudenMax,
        StrategyFamily::FprAt95UnknownRecall,
        StrategyFamily::CommunityAwareOscd,
        StrategyFamily::CommunityAwareSetting,
        StrategyFamily::ObjectiveAware,
        StrategyFamily::OracleGlobal,
        StrategyFamily::OracleSetting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyFamily::FixedRecall95 => "fixed_recall_95",
            StrategyFamily::DetectionF1Max => "detection_f1_max",
            StrategyFamily::YoudenMax => "youden_max",
            StrategyFamily::FprAt95UnknownRecall => "fpr_at_95_unknown_recall",
            StrategyFamily::CommunityAwareOscd => "community_aware_oscd",
            StrategyFamily::CommunityAwareSetting => "community_aware_setting",
            StrategyFamily::ObjectiveAware => "objective_aware",
            StrategyFamily::OracleGlobal => "oracle_global",
            StrategyFamily::OracleSetting => "oracle_setting",
        }
    }

    pub fn is_sample_level(self) -> bool {
        matches!(
            self,
            StrategyFamily::FixedRecall95
                | StrategyFamily::DetectionF1Max
                | StrategyFamily::YoudenMax
                | StrategyFamily::FprAt95UnknownRecall
        )
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, StrategyFamily::OracleGlobal | StrategyFamily::OracleSetting)
    }
}

impl FromStr for StrategyFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

impl fmt::Display for StrategyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Strategy {
    pub fn family(&self) -> StrategyFamily {
        match self {
            Strategy::FixedRecall95 => StrategyFamily::FixedRecall95,
            Strategy::DetectionF1Max => StrategyFamily::DetectionF1Max,
            Strategy::YoudenMax => StrategyFamily::YoudenMax,
            Strategy::FprAt95UnknownRecall => StrategyFamily::FprAt95UnknownRecall,
            Strategy::CommunityAwareOscd => StrategyFamily::CommunityAwareOscd,
            Strategy::CommunityAwareSetting(_) => StrategyFamily::CommunityAwareSetting,
            Strategy::ObjectiveAware(_) => StrategyFamily::ObjectiveAware,
            Strategy::OracleGlobal => StrategyFamily::OracleGlobal,
            Strategy::OracleSetting(_) => StrategyFamily::OracleSetting,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::CommunityAwareSetting(s) | Strategy::OracleSetting(s) => {
                format!("{}({})", self.family(), s.label())
            }
            Strategy::ObjectiveAware(o) => format!("{}({})", self.family(), o.as_str()),
            _ => self.family().as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectedOn {
    ValSamples,
    ValCommunities,
    TestCommunities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingBundle {
    pub setting: String,
    pub metrics: CommunityMetricBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: String,
    pub family: StrategyFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<Objective>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    pub method: String,
    pub threshold: f64,
    pub grid_index: usize,
    pub selected_on: SelectedOn,
    pub non_deployable: bool,
    /// Criterion value at the selected row, on the selection data.
    pub criterion: f64,
    pub val_confusion: ThresholdedConfusion,
    pub test_confusion: ThresholdedConfusion,
    pub val_metrics: CommunityMetricBundle,
    pub test_metrics: CommunityMetricBundle,
    pub test_by_setting: Vec<SettingBundle>,
}

impl StrategyResult {
    /// Test bundle restricted to one setting.
    pub fn test_for(&self, setting: &Setting) -> Option<&CommunityMetricBundle> {
        let label = setting.label();
        self.test_by_setting
            .iter()
            .find(|b| b.setting == label)
            .map(|b| &b.metrics)
    }
}

/// First index minimizing `f`; rows where `f` is `None` are skipped.
fn argmin_by<F: Fn(&ScanRow) -> Option<f64>>(rows: &[ScanRow], f: F) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(v) = f(r) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best
}

fn setting_or_err(scan: &ScanTable, s: &Setting) -> Result<usize, CalibrateError> {
    scan.setting_index(s)
        .ok_or_else(|| CalibrateError::UnknownSetting(s.label()))
}

pub fn select(scan: &ScanTable, strategy: Strategy) -> Result<StrategyResult, CalibrateError> {
    let label = strategy.label();
    if scan.rows.is_empty() {
        return Err(CalibrateError::EmptyScores);
    }
    let needs_val_unknowns = || {
        if scan.val_has_unknown_samples {
            Ok(())
        } else {
            Err(CalibrateError::NoValidationUnknowns { strategy: label.clone() })
        }
    };
    let needs_val_communities = || {
        if scan.val_has_unknown_communities {
            Ok(())
        } else {
            Err(CalibrateError::NoValidationCommunityUnknowns { strategy: label.clone() })
        }
    };
    let (index, criterion, selected_on) = match strategy {
        Strategy::FixedRecall95 => {
            let (i, v) = argmin_by(&scan.rows, |r| Some((r.val_confusion.known_recall - TARGET_KNOWN_RECALL).abs()))
                .expect("non-empty");
            (i, v, SelectedOn::ValSamples)
        }
        Strategy::DetectionF1Max => {
            needs_val_unknowns()?;
            let (i, v) = argmin_by(&scan.rows, |r| Some(-r.val_confusion.detection_f1)).expect("non-empty");
            (i, -v, SelectedOn::ValSamples)
        }
        Strategy::YoudenMax => {
            needs_val_unknowns()?;
            let (i, v) = argmin_by(&scan.rows, |r| Some(-r.val_confusion.youden)).expect("non-empty");
            (i, -v, SelectedOn::ValSamples)
        }
        Strategy::FprAt95UnknownRecall => {
            needs_val_unknowns()?;
            let i = scan
                .rows
                .iter()
                .rposition(|r| r.val_confusion.unknown_recall >= TARGET_UNKNOWN_RECALL)
                .ok_or_else(|| CalibrateError::Infeasible {
                    strategy: label.clone(),
                    reason: "no grid threshold reaches 0.95 validation unknown recall".into(),
                })?;
            (i, scan.rows[i].val_confusion.unknown_recall, SelectedOn::ValSamples)
        }
        Strategy::CommunityAwareOscd | Strategy::ObjectiveAware(Objective::Oscd) => {
            needs_val_communities()?;
            let (i, v) = argmin_by(&scan.rows, |r| Some(r.val_mean.oscd)).expect("non-empty");
            (i, v, SelectedOn::ValCommunities)
        }
        Strategy::ObjectiveAware(obj) => {
            needs_val_communities()?;
            let (i, _) = argmin_by(&scan.rows, |r| Some(obj.loss(&r.val_mean))).expect("non-empty");
            (i, obj.value(&scan.rows[i].val_mean), SelectedOn::ValCommunities)
        }
        Strategy::CommunityAwareSetting(s) => {
            let si = setting_or_err(scan, &s)?;
            if scan.rows[0].val_by_setting[si].is_some() && scan.val_setting_has_unknown[si] {
                let (i, v) = argmin_by(&scan.rows, |r| r.val_by_setting[si].map(|b| b.oscd)).expect("present");
                (i, v, SelectedOn::ValCommunities)
            } else {
                needs_val_communities()?;
                let (i, v) = argmin_by(&scan.rows, |r| Some(r.val_mean.oscd)).expect("non-empty");
                (i, v, SelectedOn::ValCommunities)
            }
        }
        Strategy::OracleGlobal => {
            let (i, v) = argmin_by(&scan.rows, |r| Some(r.test_mean.oscd)).expect("non-empty");
            (i, v, SelectedOn::TestCommunities)
        }
        Strategy::OracleSetting(s) => {
            let si = setting_or_err(scan, &s)?;
            let (i, v) = argmin_by(&scan.rows, |r| r.test_by_setting[si].map(|b| b.oscd))
                .ok_or_else(|| CalibrateError::UnknownSetting(format!("{} (no test communities)", s.label())))?;
            (i, v, SelectedOn::TestCommunities)
        }
    };
    let row = &scan.rows[index];
    let (objective, setting) = match strategy {
        Strategy::ObjectiveAware(o) => (Some(o), None),
        Strategy::CommunityAwareSetting(s) | Strategy::OracleSetting(s) => (None, Some(s.label())),
        _ => (None, None),
    };
    Ok(StrategyResult {
        strategy: label,
        family: strategy.family(),
        objective,
        setting,
        method: scan.method.clone(),
        threshold: row.threshold,
        grid_index: index,
        selected_on,
        non_deployable: strategy.family().is_oracle(),
        criterion,
        val_confusion: row.val_confusion,
        test_confusion: row.test_confusion,
        val_metrics: row.val_mean,
        test_metrics: row.test_mean,
        test_by_setting: scan
            .settings
            .iter()
            .zip(&row.test_by_setting)
            .filter_map(|(s, b)| {
                b.map(|metrics| SettingBundle {
                    setting: s.label(),
                    metrics,
                })
            })
            .collect(),
    })
}

pub fn select_objective_aware(scan: &ScanTable, objective: Objective) -> Result<StrategyResult, CalibrateError> {
    select(scan, Strategy::ObjectiveAware(objective))
}

/// Expands families into concrete strategies: setting-scoped families get one
/// entry per scan setting, objective-aware one per objective.
pub fn expand_strategies(scan: &ScanTable, families: &[StrategyFamily], objectives: &[Objective]) -> Vec<Strategy> {
    let mut out = Vec::new();
    for f in families {
        match f {
            StrategyFamily::FixedRecall95 => out.push(Strategy::FixedRecall95),
            StrategyFamily::DetectionF1Max => out.push(Strategy::DetectionF1Max),
            StrategyFamily::YoudenMax => out.push(Strategy::YoudenMax),
            StrategyFamily::FprAt95UnknownRecall => out.push(Strategy::FprAt95UnknownRecall),
            StrategyFamily::CommunityAwareOscd => out.push(Strategy::CommunityAwareOscd),
            StrategyFamily::OracleGlobal => out.push(Strategy::OracleGlobal),
            StrategyFamily::ObjectiveAware => out.extend(objectives.iter().map(|&o| Strategy::ObjectiveAware(o))),
            StrategyFamily::CommunityAwareSetting => {
                out.extend(scan.settings.iter().map(|&s| Strategy::CommunityAwareSetting(s)))
            }
            StrategyFamily::OracleSetting => out.extend(
                scan.settings
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| scan.rows[0].test_by_setting[*i].is_some())
                    .map(|(_, &s)| Strategy::OracleSetting(s)),
            ),
        }
    }
    out
}

/// Checks the structural properties every scan and selection must satisfy.
pub fn check_invariants(scan: &ScanTable, results: &[StrategyResult]) -> Result<(), CalibrateError> {
    let bad = |m: String| Err(CalibrateError::Invariant(m));
    for (i, w) in scan.rows.windows(2).enumerate() {
        if w[1].threshold <= w[0].threshold {
            return bad(format!("grid not strictly ascending at row {}", i + 1));
        }
        for (a, b, side) in [
            (&w[0].val_confusion, &w[1].val_confusion, "val"),
            (&w[0].test_confusion, &w[1].test_confusion, "test"),
        ] {
            if b.known_recall < a.known_recall || b.unknown_recall > a.unknown_recall {
                return bad(format!("{side} confusion not monotone at row {}", i + 1));
            }
        }
    }
    let oracle = select(scan, Strategy::OracleGlobal)?;
    for r in results {
        if r.test_metrics.oscd < oracle.test_metrics.oscd {
            return bad(format!(
                "{} test oscd {} below global oracle {}",
                r.strategy, r.test_metrics.oscd, oracle.test_metrics.oscd
            ));
        }
    }
    for (si, s) in scan.settings.iter().enumerate() {
        let Some(global_here) = scan.rows[oracle.grid_index].test_by_setting[si] else {
            continue;
        };
        let local = select(scan, Strategy::OracleSetting(*s))?;
        if local.criterion > global_here.oscd {
            return bad(format!("setting oracle for {} exceeds global oracle there", s.label()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let x = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(build_grid(&x, 5).unwrap(), x.to_vec());
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&y, 0.5), 2.5);
        assert_eq!(quantile_type7(&y, 1.0), 4.0);
        assert!((quantile_type7(&y, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn grid_degenerate_and_errors() {
        assert_eq!(build_grid(&[3.0; 10], 401).unwrap(), vec![3.0]);
        assert_eq!(build_grid(&[], 401), Err(CalibrateError::EmptyScores));
        assert_eq!(build_grid(&[1.0], 1), Err(CalibrateError::TooFewQuantiles));
        let many: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = build_grid(&many, 401).unwrap();
        assert!(g.len() <= 403);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn argmin_prefers_lowest_index() {
        let row = |t: f64, oscd: f64| ScanRow {
            threshold: t,
            val_confusion: ThresholdedConfusion::from_counts(0, 0, 0, 0),
            test_confusion: ThresholdedConfusion::from_counts(0, 0, 0, 0),
            val_mean: CommunityMetricBundle {
                oscd,
                ..Default::default()
            },
            test_mean: CommunityMetricBundle::default(),
            val_by_setting: vec![],
            test_by_setting: vec![],
        };
        let rows = vec![row(0.0, 0.3), row(1.0, 0.1), row(2.0, 0.1), row(3.0, 0.2)];
        assert_eq!(argmin_by(&rows, |r| Some(r.val_mean.oscd)), Some((1, 0.1)));
    }

    #[test]
    fn strategy_names_roundtrip() {
        for f in StrategyFamily::ALL {
            assert_eq!(f.as_str().parse::<StrategyFamily>().unwrap(), f);
        }
        for o in Objective::ALL {
            assert_eq!(o.as_str().parse::<Objective>().unwrap(), o);
        }
        assert_eq!(
            Strategy::ObjectiveAware(Objective::ShannonError).label(),
            "objective_aware(shannon_error)"
        );
    }
}
