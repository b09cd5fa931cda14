//! Community-level error metrics.
//!
//! Abundance vectors have `K + 1` entries: the `K` known taxa in canonical
//! class order followed by one unknown bin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CommunityMetricError {
    #[error("abundance vectors differ in length ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("both abundance vectors are all-zero")]
    ZeroTotal,
    #[error("{decisions} decisions for a community of {members} members")]
    DecisionCount { decisions: usize, members: usize },
    #[error("decision names known class {class} but K = {k}")]
    ClassOutOfRange { class: usize, k: usize },
    #[error("top-{top_k} overlap needs at least {top_k} known taxa, have {k}")]
    TooFewTaxa { top_k: usize, k: usize },
    #[error("top-k size must be at least 1")]
    ZeroTopK,
    #[error("abundance vector is not normalized: {0}")]
    NotNormalized(String),
}

pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Relative abundances over `K` known taxa plus a trailing unknown bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AbundanceVector(Vec<f64>);

impl AbundanceVector {
    /// Checks non-negativity and unit sum (within 1e-12).
    pub fn new(values: Vec<f64>) -> Result<Self, CommunityMetricError> {
        if values.len() < 2 {
            return Err(CommunityMetricError::NotNormalized(
                "need at least one known taxon and the unknown bin".into(),
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CommunityMetricError::NotNormalized("negative or non-finite entry".into()));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(CommunityMetricError::NotNormalized(format!("sum is {total}")));
        }
        Ok(Self(values))
    }

    /// Histogram normalized by its total. `counts` must not be all zero.
    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        assert!(total > 0, "cannot normalize an empty histogram");
        Self(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Number of known taxa (`len − 1`).
    pub fn num_known(&self) -> usize {
        self.0.len() - 1
    }

    pub fn known(&self) -> &[f64] {
        &self.0[..self.num_known()]
    }

    pub fn unknown(&self) -> f64 {
        self.0[self.num_known()]
    }
}

/// Per-member classifier decision after thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Known(usize),
    Unknown,
}

impl Decision {
    pub fn bin(self, k: usize) -> usize {
        match self {
            Decision::Known(c) => c,
            Decision::Unknown => k,
        }
    }
}

/// Counts decisions into `K + 1` bins.
pub fn decision_counts(decisions: &[Decision], k: usize) -> Result<Vec<usize>, CommunityMetricError> {
    let mut counts = vec![0usize; k + 1];
    for d in decisions {
        if let Decision::Known(c) = d {
            if *c >= k {
                return Err(CommunityMetricError::ClassOutOfRange { class: *c, k });
            }
        }
        counts[d.bin(k)] += 1;
    }
    Ok(counts)
}

pub fn predicted_abundance(
    members: usize,
    decisions: &[Decision],
    k: usize,
) -> Result<AbundanceVector, CommunityMetricError> {
    if decisions.len() != members || members == 0 {
        return Err(CommunityMetricError::DecisionCount {
            decisions: decisions.len(),
            members,
        });
    }
    Ok(AbundanceVector::from_counts(&decision_counts(decisions, k)?))
}

fn same_len(p: &AbundanceVector, q: &AbundanceVector) -> Result<(), CommunityMetricError> {
    if p.0.len() != q.0.len() {
        return Err(CommunityMetricError::DimensionMismatch(p.0.len(), q.0.len()));
    }
    Ok(())
}

/// Bray-Curtis denominator `Σ (p̂ᵢ + pᵢ)`; equals 2 for normalized inputs.
pub fn bray_curtis_denominator(p: &AbundanceVector, phat: &AbundanceVector) -> f64 {
    p.0.iter().zip(&phat.0).map(|(a, b)| a + b).sum()
}

/// Open-set community distortion: Bray-Curtis distance on the `K + 1` vectors.
pub fn oscd(p: &AbundanceVector, phat: &AbundanceVector) -> Result<f64, CommunityMetricError> {
    same_len(p, phat)?;
    let denom = bray_curtis_denominator(p, phat);
    if denom == 0.0 {
        return Err(CommunityMetricError::ZeroTotal);
    }
    let num: f64 = p.0.iter().zip(&phat.0).map(|(a, b)| (b - a).abs()).sum();
    Ok(num / denom)
}

/// `(OSCD⁺, OSCD⁻)`: total over- and under-estimation of known taxa.
pub fn oscd_directional(
    p: &AbundanceVector,
    phat: &AbundanceVector,
) -> Result<(f64, f64), CommunityMetricError> {
    same_len(p, phat)?;
    let mut plus = 0.0;
    let mut minus = 0.0;
    for (a, b) in p.known().iter().zip(phat.known()) {
        plus += (b - a).max(0.0);
        minus += (a - b).max(0.0);
    }
    Ok((plus, minus))
}

/// Shannon entropy (natural log), `0 · ln 0 = 0`.
pub fn shannon(v: &[f64]) -> f64 {
    -v.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Gini-Simpson index `1 − Σ p²`; 0 for an empty vector.
pub fn simpson(v: &[f64]) -> f64 {
    if v.iter().all(|&p| p == 0.0) {
        return 0.0;
    }
    1.0 - v.iter().map(|p| p * p).sum::<f64>()
}

pub fn richness(v: &[f64]) -> usize {
    v.iter().filter(|&&p| p > 0.0).count()
}

/// Pielou evenness `H / ln S`; 0 when `S ≤ 1`.
pub fn pielou(v: &[f64]) -> f64 {
    let s = richness(v);
    if s <= 1 {
        return 0.0;
    }
    shannon(v) / (s as f64).ln()
}

/// Which entries the diversity indices are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityDomain {
    /// All `K + 1` entries, the unknown bin acting as one pooled taxon.
    #[default]
    IncludeUnknownBin,
    /// Known taxa only, renormalized to sum to one.
    KnownRenormalized,
}

fn diversity_view(v: &AbundanceVector, domain: DiversityDomain) -> Vec<f64> {
    match domain {
        DiversityDomain::IncludeUnknownBin => v.0.clone(),
        DiversityDomain::KnownRenormalized => {
            let total: f64 = v.known().iter().sum();
            if total == 0.0 {
                vec![0.0; v.num_known()]
            } else {
                v.known().iter().map(|x| x / total).collect()
            }
        }
    }
}

/// Indices of the `top_k` most abundant known taxa, ordered by
/// (abundance descending, class index ascending).
pub fn top_taxa(v: &AbundanceVector, top_k: usize) -> Result<Vec<usize>, CommunityMetricError> {
    if top_k == 0 {
        return Err(CommunityMetricError::ZeroTopK);
    }
    let k = v.num_known();
    if k < top_k {
        return Err(CommunityMetricError::TooFewTaxa { top_k, k });
    }
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| v.0[b].total_cmp(&v.0[a]).then(a.cmp(&b)));
    idx.truncate(top_k);
    Ok(idx)
}

pub fn topk_overlap(
    p: &AbundanceVector,
    phat: &AbundanceVector,
    top_k: usize,
) -> Result<f64, CommunityMetricError> {
    same_len(p, phat)?;
    let a = top_taxa(p, top_k)?;
    let b = top_taxa(phat, top_k)?;
    let shared = a.iter().filter(|i| b.contains(i)).count();
    Ok(shared as f64 / top_k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub diversity_domain: DiversityDomain,
    pub top_k: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            diversity_domain: DiversityDomain::IncludeUnknownBin,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommunityMetricBundle {
    pub oscd: f64,
    pub oscd_plus: f64,
    pub oscd_minus: f64,
    pub mean_abs_abundance_error: f64,
    pub shannon_error: f64,
    pub simpson_error: f64,
    pub pielou_error: f64,
    pub richness_error: f64,
    pub topk_overlap: f64,
}

impl CommunityMetricBundle {
    pub const FIELDS: [&'static str; 9] = [
        "oscd",
        "oscd_plus",
        "oscd_minus",
        "mean_abs_abundance_error",
        "shannon_error",
        "simpson_error",
        "pielou_error",
        "richness_error",
        "topk_overlap",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.oscd,
            self.oscd_plus,
            self.oscd_minus,
            self.mean_abs_abundance_error,
            self.shannon_error,
            self.simpson_error,
            self.pielou_error,
            self.richness_error,
            self.topk_overlap,
        ]
    }

    fn from_values(v: [f64; 9]) -> Self {
        Self {
            oscd: v[0],
            oscd_plus: v[1],
            oscd_minus: v[2],
            mean_abs_abundance_error: v[3],
            shannon_error: v[4],
            simpson_error: v[5],
            pielou_error: v[6],
            richness_error: v[7],
            topk_overlap: v[8],
        }
    }

    /// Field-wise arithmetic mean, summed in iteration order. `None` when empty.
    pub fn mean<'a, I: IntoIterator<Item = &'a CommunityMetricBundle>>(items: I) -> Option<Self> {
        let mut acc = [0.0; 9];
        let mut n = 0usize;
        for b in items {
            for (a, v) in acc.iter_mut().zip(b.values()) {
                *a += v;
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        Some(Self::from_values(acc.map(|a| a / n as f64)))
    }
}

/// Full metric bundle for one (true, predicted) abundance pair.
pub fn evaluate_abundances(
    p: &AbundanceVector,
    phat: &AbundanceVector,
    opts: &MetricOptions,
) -> Result<CommunityMetricBundle, CommunityMetricError> {
    let oscd = oscd(p, phat)?;
    let (oscd_plus, oscd_minus) = oscd_directional(p, phat)?;
    let k = p.num_known();
    let mean_abs_abundance_error =
        p.known().iter().zip(phat.known()).map(|(a, b)| (b - a).abs()).sum::<f64>() / k as f64;
    let dp = diversity_view(p, opts.diversity_domain);
    let dq = diversity_view(phat, opts.diversity_domain);
    Ok(CommunityMetricBundle {
        oscd,
        oscd_plus,
        oscd_minus,
        mean_abs_abundance_error,
        shannon_error: (shannon(&dq) - shannon(&dp)).abs(),
        simpson_error: (simpson(&dq) - simpson(&dp)).abs(),
        pielou_error: (pielou(&dq) - pielou(&dp)).abs(),
        richness_error: (richness(&dq) as f64 - richness(&dp) as f64).abs(),
        topk_overlap: topk_overlap(p, phat, opts.top_k)?,
    })
}

/// Evaluates a community given one decision per member.
pub fn evaluate_community(
    true_abundance: &AbundanceVector,
    decisions: &[Decision],
    members: usize,
    opts: &MetricOptions,
) -> Result<CommunityMetricBundle, CommunityMetricError> {
    let phat = predicted_abundance(members, decisions, true_abundance.num_known())?;
    evaluate_abundances(true_abundance, &phat, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn av(v: &[f64]) -> AbundanceVector {
        AbundanceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn oscd_examples() {
        let p = av(&[0.5, 0.3, 0.2]);
        assert_eq!(oscd(&p, &p).unwrap(), 0.0);
        assert_eq!(oscd(&av(&[1.0, 0.0, 0.0]), &av(&[0.0, 0.0, 1.0])).unwrap(), 1.0);
        let q = av(&[0.6, 0.2, 0.2]);
        assert!((oscd(&p, &q).unwrap() - 0.1).abs() < 1e-15);
        let (plus, minus) = oscd_directional(&p, &q).unwrap();
        assert!((plus - 0.1).abs() < 1e-15);
        assert!((minus - 0.1).abs() < 1e-15);
        assert_eq!(oscd_directional(&p, &p).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn dimension_checks() {
        let p = av(&[0.5, 0.5]);
        let q = av(&[0.2, 0.3, 0.5]);
        assert!(matches!(oscd(&p, &q), Err(CommunityMetricError::DimensionMismatch(2, 3))));
        assert!(AbundanceVector::new(vec![0.5, 0.4]).is_err());
        assert!(AbundanceVector::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn diversity_closed_forms() {
        let u = [0.25; 4];
        assert!((shannon(&u) - 4f64.ln()).abs() < 1e-15);
        assert!((simpson(&u) - 0.75).abs() < 1e-15);
        assert!((pielou(&u) - 1.0).abs() < 1e-15);
        assert_eq!(richness(&u), 4);
        let single = [0.0, 1.0, 0.0];
        assert_eq!(shannon(&single), 0.0);
        assert_eq!(simpson(&single), 0.0);
        assert_eq!(pielou(&single), 0.0);
        assert_eq!(richness(&single), 1);
    }

    #[test]
    fn top_taxa_tie_rule() {
        // classes 1, 2 and 3 tie for rank 2..4; canonical order keeps 1 and 2
        let v = av(&[0.4, 0.15, 0.15, 0.15, 0.05, 0.1]);
        assert_eq!(top_taxa(&v, 3).unwrap(), vec![0, 1, 2]);
        let w = av(&[0.1, 0.1, 0.1, 0.1, 0.6]);
        assert_eq!(top_taxa(&w, 3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(top_taxa(&w, 5), Err(CommunityMetricError::TooFewTaxa { .. })));
        assert!(matches!(top_taxa(&w, 0), Err(CommunityMetricError::ZeroTopK)));
    }

    #[test]
    fn topk_overlap_extremes() {
        let p = av(&[0.3, 0.3, 0.3, 0.0, 0.0, 0.0, 0.1]);
        let q = av(&[0.0, 0.0, 0.0, 0.3, 0.3, 0.3, 0.1]);
        assert_eq!(topk_overlap(&p, &p, 3).unwrap(), 1.0);
        assert_eq!(topk_overlap(&p, &q, 3).unwrap(), 0.0);
    }

    #[test]
    fn all_unknown_decisions() {
        let p = av(&[0.25, 0.25, 0.5, 0.0]);
        let d = vec![Decision::Unknown; 4];
        let b = evaluate_community(&p, &d, 4, &MetricOptions::default()).unwrap();
        assert_eq!(b.oscd, 1.0);
        assert_eq!(b.oscd_minus, 1.0);
        assert_eq!(b.oscd_plus, 0.0);
    }

    #[test]
    fn perfect_decisions() {
        let d = [
            Decision::Known(0),
            Decision::Known(1),
            Decision::Known(2),
            Decision::Known(2),
            Decision::Unknown,
        ];
        let p = AbundanceVector::from_counts(&[1, 1, 2, 1]);
        let b = evaluate_community(&p, &d, 5, &MetricOptions::default()).unwrap();
        assert_eq!(b.values()[..8], [0.0; 8]);
        assert_eq!(b.topk_overlap, 1.0);
    }

    #[test]
    fn decision_count_mismatch() {
        let p = AbundanceVector::from_counts(&[1, 1]);
        assert!(matches!(
            evaluate_community(&p, &[Decision::Unknown], 2, &MetricOptions::default()),
            Err(CommunityMetricError::DecisionCount { .. })
        ));
        assert!(matches!(
            predicted_abundance(1, &[Decision::Known(5)], 1),
            Err(CommunityMetricError::ClassOutOfRange { class: 5, k: 1 })
        ));
    }

    #[test]
    fn mean_aggregation_breaks_identity() {
        let a = CommunityMetricBundle {
            oscd: 0.2,
            oscd_plus: 0.2,
            oscd_minus: 0.0,
            ..Default::default()
        };
        let b = CommunityMetricBundle {
            oscd: 0.2,
            oscd_plus: 0.0,
            oscd_minus: 0.2,
            ..Default::default()
        };
        let m = CommunityMetricBundle::mean([&a, &b]).unwrap();
        assert_eq!(m.oscd, 0.2);
        assert_eq!(m.oscd_plus.max(m.oscd_minus), 0.1);
        assert!(CommunityMetricBundle::mean(std::iter::empty()).is_none());
    }

    #[test]
    fn known_renormalized_domain() {
        let p = av(&[0.5, 0.5, 0.0]);
        let q = av(&[0.25, 0.25, 0.5]);
        let opts = MetricOptions {
            diversity_domain: DiversityDomain::KnownRenormalized,
            top_k: 1,
        };
        let b = evaluate_abundances(&p, &q, &opts).unwrap();
        // identical after dropping the unknown bin
        assert_eq!(b.shannon_error, 0.0);
        assert_eq!(b.richness_error, 0.0);
        let inc = evaluate_abundances(&p, &q, &MetricOptions { top_k: 1, ..Default::default() }).unwrap();
        assert_eq!(inc.richness_error, 1.0);
    }
}
