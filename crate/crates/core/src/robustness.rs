//! Seed-sweep aggregation, paired tests, rank correlation, absorption
//! matrices and the boundary recommendation rule.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::ingest::{Group, GroupKind, SampleSet, Split};
use crate::scoring::{argmax, max_softmax, ScoreTable};

#[derive(Debug, Error, PartialEq)]
pub enum RobustnessError {
    #[error("need at least 2 paired values, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("seed sets are not aligned")]
    MisalignedSeeds,
    #[error("{split} split has no unknown samples")]
    NoUnknowns { split: Split },
    #[error("sample {0:?} has no logits")]
    MissingLogits(String),
    #[error("sample {0:?} has a predicted class outside the known classes")]
    PredictedClass(String),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-pass sample standard deviation (n − 1 divisor). `None` for n < 2.
pub fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

/// One scalar metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweepSummary {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: Option<f64>,
}

impl SeedSweepSummary {
    pub fn new(per_seed: &[(u64, f64)]) -> Option<Self> {
        if per_seed.is_empty() {
            return None;
        }
        let values: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
        Some(Self {
            seeds: per_seed.iter().map(|p| p.0).collect(),
            mean: mean(&values),
            sd: sample_sd(&values),
            values,
        })
    }

    /// `mean ± sd` with fixed decimals; sd omitted when undefined.
    pub fn format(&self, decimals: usize) -> String {
        match self.sd {
            Some(sd) => format!("{:.*} ± {:.*}", decimals, self.mean, decimals, sd),
            None => format!("{:.*}", decimals, self.mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    pub p: f64,
    /// Differences had zero variance; `p` is reported as 1.
    pub degenerate: bool,
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired two-sided t test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, RobustnessError> {
    if a.len() != b.len() {
        return Err(RobustnessError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(RobustnessError::TooFew(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let sd = sample_sd(&d).expect("n >= 2");
    if sd == 0.0 {
        return Ok(PairedTTest {
            n,
            mean_difference: md,
            t: if md == 0.0 { 0.0 } else { md.signum() * f64::INFINITY },
            p: 1.0,
            degenerate: true,
        });
    }
    let t = md / (sd / (n as f64).sqrt());
    let p = student_t_two_sided_p(t, (n - 1) as f64).max(f64::MIN_POSITIVE);
    Ok(PairedTTest {
        n,
        mean_difference: md,
        t,
        p,
        degenerate: false,
    })
}

/// 1-based midranks (ties share the mean of their positions).
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, RobustnessError> {
    if x.len() != y.len() {
        return Err(RobustnessError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(RobustnessError::TooFew(x.len()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(RobustnessError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(RobustnessError::ZeroVariance("y"));
    }
    // sqrt of the product keeps rank correlations exact on tie-free data
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, RobustnessError> {
    if x.len() != y.len() {
        return Err(RobustnessError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&midranks(x), &midranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionRow {
    pub category: String,
    pub group: GroupKind,
    pub n: usize,
    /// Percent of this category's samples predicted as each known class.
    pub percentages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionMatrix {
    pub split: Split,
    pub known_classes: Vec<String>,
    pub rows: Vec<AbsorptionRow>,
}

/// Closed-set landing percentages per unknown category. Rows: target
/// unknowns then non-target unknowns, each sorted by name.
pub fn absorption_matrix(s: &SampleSet, table: &ScoreTable, split: Split) -> Result<AbsorptionMatrix, RobustnessError> {
    let k = s.num_known();
    let mut counts: std::collections::BTreeMap<(GroupKind, String), Vec<usize>> = Default::default();
    for (_, r) in table.rows_in(split) {
        if r.group.is_unknown() {
            let row = counts
                .entry((r.group, r.category.clone()))
                .or_insert_with(|| vec![0; k]);
            if r.predicted_class >= k {
                return Err(RobustnessError::PredictedClass(r.sample_id.clone()));
            }
            row[r.predicted_class] += 1;
        }
    }
    if counts.is_empty() {
        return Err(RobustnessError::NoUnknowns { split });
    }
    let rows = counts
        .into_iter()
        .map(|((group, category), c)| {
            let n: usize = c.iter().sum();
            AbsorptionRow {
                category,
                group,
                n,
                percentages: c.iter().map(|&x| 100.0 * x as f64 / n as f64).collect(),
            }
        })
        .collect();
    Ok(AbsorptionMatrix {
        split,
        known_classes: s.known_classes.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub group: GroupKind,
    pub n: usize,
    /// Closed-set accuracy, known samples only.
    pub accuracy: Option<f64>,
    pub mean_confidence: f64,
    pub frac_confident: f64,
}

pub const CONFIDENT_THRESHOLD: f64 = 0.90;

/// Per-group closed-set confidence profile from the manifest logits.
pub fn confidence_summary(s: &SampleSet, split: Split) -> Result<Vec<ConfidenceRow>, RobustnessError> {
    let mut acc: Vec<(usize, usize, f64, usize)> = vec![(0, 0, 0.0, 0); 3];
    for &i in s.split(split) {
        let r = &s.records[i];
        let logits = r
            .logits
            .as_deref()
            .ok_or_else(|| RobustnessError::MissingLogits(r.sample_id.clone()))?;
        let c = max_softmax(logits).map_err(|_| RobustnessError::MissingLogits(r.sample_id.clone()))?;
        let slot = match r.group {
            Group::Known { .. } => 0,
            Group::TargetUnknown => 1,
            Group::NonTargetUnknown => 2,
        };
        let a = &mut acc[slot];
        a.0 += 1;
        if let Group::Known { class_index } = r.group {
            if argmax(logits) == class_index {
                a.1 += 1;
            }
        }
        a.2 += c;
        if c >= CONFIDENT_THRESHOLD {
            a.3 += 1;
        }
    }
    Ok(GroupKind::ALL
        .iter()
        .zip(acc)
        .filter(|(_, a)| a.0 > 0)
        .map(|(&group, (n, correct, sum, confident))| ConfidenceRow {
            group,
            n,
            accuracy: (group == GroupKind::Known).then(|| correct as f64 / n as f64),
            mean_confidence: sum / n as f64,
            frac_confident: confident as f64 / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRule {
    pub delta: f64,
    pub alpha: f64,
}

impl Default for RecommendationRule {
    fn default() -> Self {
        Self {
            delta: 0.005,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    CaRecommended,
    SamplePreferred,
    SampleSufficient,
    Boundary,
}

impl Recommendation {
    pub fn as_str(self) -> &'static str {
        match self {
            Recommendation::CaRecommended => "ca_recommended",
            Recommendation::SamplePreferred => "sample_preferred",
            Recommendation::SampleSufficient => "sample_sufficient",
            Recommendation::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRow {
    pub setting: String,
    pub best_sample_strategy: String,
    pub best_sample_oscd: SeedSweepSummary,
    pub ca_oscd: SeedSweepSummary,
    pub setting_oracle_oscd: SeedSweepSummary,
    pub paired_t: f64,
    pub paired_p: f64,
    pub degenerate: bool,
    pub recommendation: Recommendation,
}

/// Applies the rule to already-aligned means and a paired p-value.
pub fn apply_rule(mean_best: f64, mean_ca: f64, p: f64, rule: &RecommendationRule) -> Recommendation {
    let diff = mean_ca - mean_best;
    if diff < -rule.delta && p < rule.alpha {
        Recommendation::CaRecommended
    } else if diff > rule.delta {
        Recommendation::SamplePreferred
    } else if diff.abs() <= rule.delta && p < rule.alpha {
        Recommendation::Boundary
    } else {
        Recommendation::SampleSufficient
    }
}

/// Per-seed `(seed, oscd)` series must list the same seeds in the same order.
pub fn recommend(
    setting: &str,
    best_sample_strategy: &str,
    best_sample: &[(u64, f64)],
    ca: &[(u64, f64)],
    oracle: &[(u64, f64)],
    rule: &RecommendationRule,
) -> Result<RecommendationRow, RobustnessError> {
    let seeds = |v: &[(u64, f64)]| v.iter().map(|p| p.0).collect::<Vec<_>>();
    if seeds(best_sample) != seeds(ca) || seeds(ca) != seeds(oracle) {
        return Err(RobustnessError::MisalignedSeeds);
    }
    let vals = |v: &[(u64, f64)]| v.iter().map(|p| p.1).collect::<Vec<_>>();
    let test = paired_t_test(&vals(ca), &vals(best_sample))?;
    let best = SeedSweepSummary::new(best_sample).ok_or(RobustnessError::TooFew(0))?;
    let ca_s = SeedSweepSummary::new(ca).ok_or(RobustnessError::TooFew(0))?;
    Ok(RecommendationRow {
        setting: setting.to_string(),
        best_sample_strategy: best_sample_strategy.to_string(),
        recommendation: apply_rule(best.mean, ca_s.mean, test.p, rule),
        best_sample_oscd: best,
        ca_oscd: ca_s,
        setting_oracle_oscd: SeedSweepSummary::new(oracle).ok_or(RobustnessError::TooFew(0))?,
        paired_t: test.t,
        paired_p: test.p,
        degenerate: test.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sd_two_pass() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((sample_sd(&v).unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(sample_sd(&[1.0]), None);
        let s = SeedSweepSummary::new(&[(42, 0.1), (43, 0.3)]).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-15);
        assert_eq!(s.format(3), "0.200 ± 0.141");
    }

    #[test]
    fn t_test_degenerate_and_antisymmetric() {
        let a = [0.1, 0.2, 0.3];
        let r = paired_t_test(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 1.0);
        let b = [0.15, 0.1, 0.5];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert!((ab.p - ba.p).abs() < 1e-15);
        assert!(matches!(paired_t_test(&[1.0], &[2.0]), Err(RobustnessError::TooFew(1))));
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[2.0]), Err(RobustnessError::LengthMismatch(2, 1))));
    }

    #[test]
    fn t_test_jitter_limit() {
        let b = [0.0; 5];
        let mut last = 1.0;
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let a = [1.0, 1.0 + eps, 1.0 - eps, 1.0 + eps / 2.0, 1.0];
            let p = paired_t_test(&a, &b).unwrap().p;
            assert!(p < last);
            last = p;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn t_cdf_reference() {
        // df = 4 has the closed form p = 1 - (t / sqrt(t^2 + 4)) (1 + 2 / (t^2 + 4))
        let exact = 1.0 - (2.0 / 8f64.sqrt()) * (1.0 + 2.0 / 8.0);
        assert!((student_t_two_sided_p(2.0, 4.0) - exact).abs() < 1e-12);
        assert_eq!(student_t_two_sided_p(0.0, 3.0), 1.0);
    }

    #[test]
    fn correlations() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(matches!(pearson(&x, &[1.0; 5]), Err(RobustnessError::ZeroVariance("y"))));
    }

    #[test]
    fn rule_table() {
        let r = RecommendationRule::default();
        assert_eq!(apply_rule(0.30, 0.20, 0.001, &r), Recommendation::CaRecommended);
        assert_eq!(apply_rule(0.30, 0.20, 0.2, &r), Recommendation::SampleSufficient);
        assert_eq!(apply_rule(0.20, 0.30, 0.001, &r), Recommendation::SamplePreferred);
        assert_eq!(apply_rule(0.200, 0.198, 0.001, &r), Recommendation::Boundary);
        assert_eq!(apply_rule(0.200, 0.198, 0.5, &r), Recommendation::SampleSufficient);
    }

    #[test]
    fn recommend_checks_seed_alignment() {
        let a = [(42, 0.3), (43, 0.31)];
        let b = [(43, 0.2), (42, 0.21)];
        let r = recommend("x", "f1", &a, &b, &b, &RecommendationRule::default());
        assert_eq!(r, Err(RobustnessError::MisalignedSeeds));
        let c = [(42, 0.2), (43, 0.22)];
        let row = recommend("x", "f1", &a, &c, &c, &RecommendationRule::default()).unwrap();
        assert_eq!(row.recommendation, Recommendation::SampleSufficient);
        assert!(row.paired_p > 0.0 && row.paired_p <= 1.0);
    }
}
