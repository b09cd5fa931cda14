//! Seeded pseudo-community generation.
//!
//! A community is a with-replacement resample of one split's pool. Slot
//! counts are deterministic for every type except `empirical`:
//!
//! * unknown slots = round-half-to-even(ratio × size), the rest are known slots;
//! * each portion is split across categories by largest-remainder
//!   apportionment of the type's weights (ties go to the lower index);
//! * each slot draws uniformly from its category bucket.
//!
//! `empirical` communities draw every member i.i.d. in proportion to the
//! pool frequencies, so their realized unknown ratio varies per replicate.
//!
//! Each community's random stream is seeded from
//! `(seed, spec fingerprint, replicate)`; the fingerprint covers type, ratio,
//! size and split but not the seed or replicate count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::community_metrics::AbundanceVector;
use crate::ingest::{Group, GroupKind, SampleSet, Split};
use crate::rng::{cumulative, SeededStream};

pub const DEFAULT_SIZE: usize = 500;
pub const DEFAULT_REPLICATES: usize = 20;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];
pub const CONTROLLED_RATIOS: [f64; 4] = [0.0, 0.1, 0.2, 0.4];
pub const DOMINANT_SHARE: f64 = 0.75;

pub const SUITE_FORMAT: &str = "oscd-community-suite";
pub const SUITE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CommunityError {
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("invalid community spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported spec {setting} on {split} pool: {reason}")]
    Unsupported {
        setting: String,
        split: Split,
        reason: String,
    },
    #[error("suite manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommunityType {
    Empirical,
    Balanced,
    UnknownRatioControlled,
    DominantTaxa,
    LongTail,
    NonTargetEnriched,
}

impl CommunityType {
    pub const ALL: [CommunityType; 6] = [
        CommunityType::Empirical,
        CommunityType::Balanced,
        CommunityType::UnknownRatioControlled,
        CommunityType::DominantTaxa,
        CommunityType::LongTail,
        CommunityType::NonTargetEnriched,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommunityType::Empirical => "empirical",
            CommunityType::Balanced => "balanced",
            CommunityType::UnknownRatioControlled => "unknown_ratio_controlled",
            CommunityType::DominantTaxa => "dominant_taxa",
            CommunityType::LongTail => "long_tail",
            CommunityType::NonTargetEnriched => "non_target_enriched",
        }
    }
}

impl fmt::Display for CommunityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Requested unknown share of community slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnknownRatio {
    Fixed(f64),
    Empirical(EmpiricalTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmpiricalTag {
    Empirical,
}

impl UnknownRatio {
    pub const EMPIRICAL: UnknownRatio = UnknownRatio::Empirical(EmpiricalTag::Empirical);

    pub fn fixed(self) -> Option<f64> {
        match self {
            UnknownRatio::Fixed(r) => Some(r),
            UnknownRatio::Empirical(_) => None,
        }
    }
}

impl fmt::Display for UnknownRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnknownRatio::Fixed(r) => write!(f, "{r}"),
            UnknownRatio::Empirical(_) => f.write_str("empirical"),
        }
    }
}

/// One (community type, unknown ratio) cell of the experimental grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub community_type: CommunityType,
    pub unknown_ratio: UnknownRatio,
}

impl Setting {
    pub fn label(&self) -> String {
        match self.unknown_ratio {
            UnknownRatio::Empirical(_) => self.community_type.to_string(),
            UnknownRatio::Fixed(_) => format!("{}@{}", self.community_type, self.unknown_ratio),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommunitySpec {
    pub community_type: CommunityType,
    pub unknown_ratio: UnknownRatio,
    pub size: usize,
    pub replicates: usize,
    pub seed: u64,
    pub split: Split,
}

#[derive(Serialize)]
struct FingerprintFields<'a> {
    community_type: &'a CommunityType,
    unknown_ratio: &'a UnknownRatio,
    size: usize,
    split: Split,
}

impl CommunitySpec {
    pub fn new(community_type: CommunityType, unknown_ratio: UnknownRatio, split: Split) -> Self {
        Self {
            community_type,
            unknown_ratio,
            size: DEFAULT_SIZE,
            replicates: DEFAULT_REPLICATES,
            seed: DEFAULT_SEED,
            split,
        }
    }

    pub fn setting(&self) -> Setting {
        Setting {
            community_type: self.community_type,
            unknown_ratio: self.unknown_ratio,
        }
    }

    pub fn validate(&self) -> Result<(), CommunityError> {
        let bad = |m: String| Err(CommunityError::InvalidSpec(m));
        match (self.community_type, self.unknown_ratio) {
            (CommunityType::Empirical, UnknownRatio::Fixed(_)) => {
                return bad("empirical communities take unknown_ratio = \"empirical\"".into())
            }
            (t, UnknownRatio::Empirical(_)) if t != CommunityType::Empirical => {
                return bad(format!("{t} communities need a numeric unknown_ratio"))
            }
            (_, UnknownRatio::Fixed(r)) if !(0.0..=1.0).contains(&r) => {
                return bad(format!("unknown_ratio {r} outside [0, 1]"))
            }
            _ => {}
        }
        if self.size == 0 {
            return bad("size must be at least 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.split == Split::Train {
            return bad("communities are drawn from val or test pools".into());
        }
        Ok(())
    }

    /// Hex digest prefix identifying (type, ratio, size, split).
    pub fn fingerprint(&self) -> String {
        let fields = FingerprintFields {
            community_type: &self.community_type,
            unknown_ratio: &self.unknown_ratio,
            size: self.size,
            split: self.split,
        };
        let json = serde_json::to_vec(&fields).expect("spec serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    fn fingerprint_u64(&self) -> u64 {
        let bytes = hex::decode(self.fingerprint()).expect("hex");
        u64::from_be_bytes(bytes.try_into().expect("8 bytes"))
    }

    /// Number of unknown slots for fixed-ratio specs.
    pub fn unknown_slots(&self) -> Option<usize> {
        self.unknown_ratio.fixed().map(|r| round_half_even(r * self.size as f64))
    }
}

/// Round half to even, snapping values within 1e-9 of an integer or a
/// half-integer first so products like `0.1 × 500` are not perturbed by
/// binary representation error.
pub fn round_half_even(x: f64) -> usize {
    let twice = 2.0 * x;
    let snapped = if (twice - twice.round()).abs() < 2e-9 {
        twice.round() / 2.0
    } else {
        x
    };
    snapped.round_ties_even().max(0.0) as usize
}

/// Largest-remainder apportionment of `total` slots by `weights`.
///
/// Zero-weight entries get no slots; remainders tie toward the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut slots: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = slots.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        slots[i] += 1;
    }
    slots
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnknownBucket {
    pub category: String,
    pub group: GroupKind,
    pub members: Vec<usize>,
}

/// One split's samples indexed by community bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub split: Split,
    pub num_known: usize,
    /// Record indices per known class, in canonical class order.
    pub known: Vec<Vec<usize>>,
    /// Unknown categories: target unknowns first, then non-target, each by name.
    pub unknown: Vec<UnknownBucket>,
    pub total: usize,
}

impl Pool {
    pub fn build(s: &SampleSet, split: Split) -> Result<Self, CommunityError> {
        let idx = s.split(split);
        if idx.is_empty() {
            return Err(CommunityError::EmptySplit(split));
        }
        let mut known = vec![Vec::new(); s.num_known()];
        let mut unknown: BTreeMap<(GroupKind, String), Vec<usize>> = BTreeMap::new();
        for &i in idx {
            let r = &s.records[i];
            match r.group {
                Group::Known { class_index } => known[class_index].push(i),
                g => unknown
                    .entry((g.kind(), r.category.clone()))
                    .or_default()
                    .push(i),
            }
        }
        let unknown = unknown
            .into_iter()
            .map(|((group, category), members)| UnknownBucket {
                category,
                group,
                members,
            })
            .collect();
        Ok(Self {
            split,
            num_known: s.num_known(),
            known,
            unknown,
            total: idx.len(),
        })
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().map(Vec::len).sum()
    }

    pub fn unknown_count(&self) -> usize {
        self.unknown.iter().map(|b| b.members.len()).sum()
    }

    pub fn has_unknown(&self) -> bool {
        self.unknown_count() > 0
    }

    pub fn has_non_target(&self) -> bool {
        self.unknown
            .iter()
            .any(|b| b.group == GroupKind::NonTargetUnknown && !b.members.is_empty())
    }

    /// Empirical frequency of each category: known classes in order, then
    /// unknown buckets in pool order. Sums to 1.
    pub fn category_frequencies(&self) -> Vec<(String, f64)> {
        let n = self.total as f64;
        self.known
            .iter()
            .enumerate()
            .map(|(k, b)| (format!("#{k}"), b.len() as f64 / n))
            .chain(
                self.unknown
                    .iter()
                    .map(|b| (b.category.clone(), b.members.len() as f64 / n)),
            )
            .collect()
    }

    /// Frequencies over the `K + 1` abundance bins.
    pub fn bin_frequencies(&self) -> Vec<f64> {
        let n = self.total as f64;
        let mut v: Vec<f64> = self.known.iter().map(|b| b.len() as f64 / n).collect();
        v.push(self.unknown_count() as f64 / n);
        v
    }

    /// Most frequent known class; ties to the lowest class index.
    pub fn dominant_class(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, b) in self.known.iter().enumerate() {
            if b.is_empty() {
                continue;
            }
            if best.is_none_or(|j| b.len() > self.known[j].len()) {
                best = Some(k);
            }
        }
        best
    }

    fn buckets(&self) -> Vec<&[usize]> {
        self.known
            .iter()
            .map(Vec::as_slice)
            .chain(self.unknown.iter().map(|b| b.members.as_slice()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Community {
    /// Record indices into the source [`SampleSet`], in draw order.
    pub members: Vec<usize>,
    pub true_counts: Vec<usize>,
    pub true_abundance: AbundanceVector,
    pub spec: CommunitySpec,
    pub replicate: usize,
}

impl Community {
    pub fn setting(&self) -> Setting {
        self.spec.setting()
    }
}

fn slot_weights(pool: &Pool, spec: &CommunitySpec) -> (Vec<f64>, Vec<f64>) {
    let sizes_known: Vec<f64> = pool.known.iter().map(|b| b.len() as f64).collect();
    let sizes_unknown: Vec<f64> = pool.unknown.iter().map(|b| b.members.len() as f64).collect();
    let indicator = |v: &[f64]| v.iter().map(|&n| if n > 0.0 { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    let inverse = |v: &[f64]| v.iter().map(|&n| if n > 0.0 { 1.0 / n } else { 0.0 }).collect::<Vec<_>>();
    match spec.community_type {
        CommunityType::Empirical | CommunityType::UnknownRatioControlled => (sizes_known, sizes_unknown),
        CommunityType::Balanced => (indicator(&sizes_known), indicator(&sizes_unknown)),
        CommunityType::LongTail => (inverse(&sizes_known), inverse(&sizes_unknown)),
        CommunityType::NonTargetEnriched => {
            let unknown = pool
                .unknown
                .iter()
                .map(|b| {
                    if b.group == GroupKind::NonTargetUnknown {
                        b.members.len() as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            (sizes_known, unknown)
        }
        CommunityType::DominantTaxa => {
            let dominant = pool.dominant_class();
            let others: f64 = sizes_known
                .iter()
                .enumerate()
                .filter(|(k, _)| Some(*k) != dominant)
                .map(|(_, n)| n)
                .sum();
            let known = sizes_known
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    if Some(k) == dominant {
                        if others > 0.0 {
                            DOMINANT_SHARE
                        } else {
                            1.0
                        }
                    } else if others > 0.0 {
                        (1.0 - DOMINANT_SHARE) * n / others
                    } else {
                        0.0
                    }
                })
                .collect();
            (known, sizes_unknown)
        }
    }
}

/// Per-bucket slot counts (known buckets first, then unknown buckets) for
/// fixed-ratio specs.
pub fn slot_plan(pool: &Pool, spec: &CommunitySpec) -> Result<Vec<usize>, CommunityError> {
    spec.validate()?;
    let unsupported = |reason: &str| CommunityError::Unsupported {
        setting: spec.setting().label(),
        split: pool.split,
        reason: reason.to_string(),
    };
    let unknown_slots = spec
        .unknown_slots()
        .ok_or_else(|| CommunityError::InvalidSpec("empirical specs have no slot plan".into()))?;
    let known_slots = spec.size - unknown_slots;
    let (wk, wu) = slot_weights(pool, spec);
    if known_slots > 0 && wk.iter().sum::<f64>() <= 0.0 {
        return Err(unsupported("no known samples in pool"));
    }
    if unknown_slots > 0 && wu.iter().sum::<f64>() <= 0.0 {
        return Err(unsupported(if spec.community_type == CommunityType::NonTargetEnriched {
            "no non-target unknown samples in pool"
        } else {
            "no unknown samples in pool"
        }));
    }
    let mut plan = apportion(known_slots, &wk);
    plan.extend(apportion(unknown_slots, &wu));
    Ok(plan)
}

fn finish(pool: &Pool, s_bins: &[usize], members: Vec<usize>, spec: CommunitySpec, replicate: usize) -> Community {
    let mut true_counts = vec![0usize; pool.num_known + 1];
    for &b in s_bins {
        true_counts[b] += 1;
    }
    Community {
        true_abundance: AbundanceVector::from_counts(&true_counts),
        true_counts,
        members,
        spec,
        replicate,
    }
}

/// Draws replicate `replicate` of `spec` from `pool`.
pub fn sample_community(pool: &Pool, spec: &CommunitySpec, replicate: usize) -> Result<Community, CommunityError> {
    spec.validate()?;
    if pool.split != spec.split {
        return Err(CommunityError::InvalidSpec(format!(
            "spec targets {} but pool is {}",
            spec.split, pool.split
        )));
    }
    let mut rng = SeededStream::from_parts(spec.seed, spec.fingerprint_u64(), replicate as u64);
    let buckets = pool.buckets();
    let bin_of = |bucket: usize| bucket.min(pool.num_known);

    let mut members = Vec::with_capacity(spec.size);
    let mut bins = Vec::with_capacity(spec.size);
    match spec.community_type {
        CommunityType::Empirical => {
            let weights: Vec<f64> = buckets.iter().map(|b| b.len() as f64).collect();
            let cum = cumulative(&weights);
            for _ in 0..spec.size {
                let b = rng.weighted_index(&cum);
                members.push(buckets[b][rng.index(buckets[b].len())]);
                bins.push(bin_of(b));
            }
        }
        _ => {
            let plan = slot_plan(pool, spec)?;
            for (b, &slots) in plan.iter().enumerate() {
                for _ in 0..slots {
                    members.push(buckets[b][rng.index(buckets[b].len())]);
                    bins.push(bin_of(b));
                }
            }
        }
    }
    Ok(finish(pool, &bins, members, *spec, replicate))
}

/// All communities for a grid of specs and seeds, ordered by
/// (spec, seed, replicate).
#[derive(Debug, Clone, PartialEq)]
pub struct CommunitySuite {
    pub split: Split,
    pub communities: Vec<Community>,
}

impl CommunitySuite {
    /// Distinct settings in first-appearance order.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out: Vec<Setting> = Vec::new();
        for c in &self.communities {
            let s = c.setting();
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for c in &self.communities {
            if !out.contains(&c.spec.seed) {
                out.push(c.spec.seed);
            }
        }
        out
    }

    /// Sub-suite holding only communities generated with `seed`.
    pub fn for_seed(&self, seed: u64) -> CommunitySuite {
        CommunitySuite {
            split: self.split,
            communities: self
                .communities
                .iter()
                .filter(|c| c.spec.seed == seed)
                .cloned()
                .collect(),
        }
    }

    pub fn to_manifest(&self, samples: &SampleSet, provenance: Provenance) -> SuiteManifest {
        SuiteManifest {
            format: SUITE_FORMAT.into(),
            version: SUITE_VERSION,
            provenance,
            split: self.split,
            num_known: samples.num_known(),
            communities: self
                .communities
                .iter()
                .map(|c| CommunityEntry {
                    setting: c.setting().label(),
                    spec_fingerprint: c.spec.fingerprint(),
                    spec: c.spec,
                    replicate: c.replicate,
                    true_counts: c.true_counts.clone(),
                    members: c
                        .members
                        .iter()
                        .map(|&i| samples.records[i].sample_id.clone())
                        .collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a suite from a manifest, resolving sample ids against `samples`
    /// and re-checking every recorded count.
    pub fn from_manifest(m: &SuiteManifest, samples: &SampleSet) -> Result<Self, CommunityError> {
        m.check_header()?;
        if m.num_known != samples.num_known() {
            return Err(CommunityError::Manifest(format!(
                "manifest K = {} but sample set K = {}",
                m.num_known,
                samples.num_known()
            )));
        }
        let ids: HashMap<&str, usize> = samples
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.sample_id.as_str(), i))
            .collect();
        let k = samples.num_known();
        let mut communities = Vec::with_capacity(m.communities.len());
        for (n, e) in m.communities.iter().enumerate() {
            let mut members = Vec::with_capacity(e.members.len());
            let mut counts = vec![0usize; k + 1];
            for id in &e.members {
                let &i = ids.get(id.as_str()).ok_or_else(|| {
                    CommunityError::Manifest(format!("community {n}: unknown sample id {id:?}"))
                })?;
                let r = &samples.records[i];
                if r.split != m.split {
                    return Err(CommunityError::Manifest(format!(
                        "community {n}: sample {id:?} is in {} not {}",
                        r.split, m.split
                    )));
                }
                counts[r.group.class_index().unwrap_or(k)] += 1;
                members.push(i);
            }
            if counts != e.true_counts {
                return Err(CommunityError::Manifest(format!(
                    "community {n}: recorded counts do not match members"
                )));
            }
            communities.push(Community {
                true_abundance: AbundanceVector::from_counts(&counts),
                true_counts: counts,
                members,
                spec: e.spec,
                replicate: e.replicate,
            });
        }
        Ok(Self {
            split: m.split,
            communities,
        })
    }
}

/// Generates `spec.replicates` communities per (spec, seed). The seed field
/// of each spec is replaced by the seed being generated.
pub fn generate_suite(pool: &Pool, specs: &[CommunitySpec], seeds: &[u64]) -> Result<CommunitySuite, CommunityError> {
    let mut communities = Vec::new();
    for spec in specs {
        for &seed in seeds {
            let spec = CommunitySpec { seed, ..*spec };
            for r in 0..spec.replicates {
                communities.push(sample_community(pool, &spec, r)?);
            }
        }
    }
    Ok(CommunitySuite {
        split: pool.split,
        communities,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

impl Provenance {
    pub fn new(config_fingerprint: Option<String>) -> Self {
        Self {
            tool: "oscd".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_fingerprint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityEntry {
    pub setting: String,
    pub spec_fingerprint: String,
    pub spec: CommunitySpec,
    pub replicate: usize,
    pub true_counts: Vec<usize>,
    pub members: Vec<String>,
}

/// Serializable record of a suite: the unit of reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    pub split: Split,
    pub num_known: usize,
    pub communities: Vec<CommunityEntry>,
}

impl SuiteManifest {
    fn check_header(&self) -> Result<(), CommunityError> {
        if self.format != SUITE_FORMAT {
            return Err(CommunityError::Manifest(format!("unexpected format {:?}", self.format)));
        }
        if self.version != SUITE_VERSION {
            return Err(CommunityError::Manifest(format!("unsupported version {}", self.version)));
        }
        for (n, e) in self.communities.iter().enumerate() {
            e.spec
                .validate()
                .map_err(|err| CommunityError::Manifest(format!("community {n}: {err}")))?;
            if e.spec.split != self.split {
                return Err(CommunityError::Manifest(format!("community {n}: split mismatch")));
            }
            if e.members.len() != e.spec.size {
                return Err(CommunityError::Manifest(format!(
                    "community {n}: {} members but size {}",
                    e.members.len(),
                    e.spec.size
                )));
            }
            if e.true_counts.len() != self.num_known + 1 {
                return Err(CommunityError::Manifest(format!("community {n}: expected K + 1 counts")));
            }
            if e.spec_fingerprint != e.spec.fingerprint() {
                return Err(CommunityError::Manifest(format!("community {n}: fingerprint mismatch")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parses and structurally validates a manifest (without sample lookup).
    pub fn parse(text: &str) -> Result<Self, CommunityError> {
        let m: SuiteManifest =
            serde_json::from_str(text).map_err(|e| CommunityError::Manifest(e.to_string()))?;
        m.check_header()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SampleRecord;

    /// Pool with `known_sizes[k]` known samples per class, and unknown
    /// categories `(name, group, n)`.
    pub(crate) fn toy_set(known_sizes: &[usize], unknown: &[(&str, GroupKind, usize)], split: Split) -> SampleSet {
        let k = known_sizes.len();
        let mut records = Vec::new();
        for (c, &n) in known_sizes.iter().enumerate() {
            for i in 0..n {
                records.push(SampleRecord {
                    sample_id: format!("k{c}_{i}"),
                    split,
                    category: format!("class{c}"),
                    group: Group::Known { class_index: c },
                    logits: Some(vec![0.0; k]),
                    feature: None,
                });
            }
        }
        for (name, g, n) in unknown {
            for i in 0..*n {
                records.push(SampleRecord {
                    sample_id: format!("{name}_{i}"),
                    split,
                    category: name.to_string(),
                    group: match g {
                        GroupKind::TargetUnknown => Group::TargetUnknown,
                        GroupKind::NonTargetUnknown => Group::NonTargetUnknown,
                        GroupKind::Known => unreachable!(),
                    },
                    logits: Some(vec![0.0; k]),
                    feature: None,
                });
            }
        }
        SampleSet::new((0..k).map(|c| format!("class{c}")).collect(), None, false, records).unwrap()
    }

    fn spec(t: CommunityType, r: f64) -> CommunitySpec {
        CommunitySpec::new(t, UnknownRatio::Fixed(r), Split::Val)
    }

    #[test]
    fn rounding_rules() {
        assert_eq!(round_half_even(0.1 * 500.0), 50);
        assert_eq!(round_half_even(0.4 * 500.0), 200);
        assert_eq!(round_half_even(2.5), 2);
        assert_eq!(round_half_even(3.5), 4);
        assert_eq!(round_half_even(0.7 * 10.0), 7);
        assert_eq!(round_half_even(0.15 * 10.0), 2);
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(400, &[0.75, 0.125, 0.125]), vec![300, 50, 50]);
        assert_eq!(apportion(5, &[0.0, 2.0, 0.0]), vec![0, 5, 0]);
        assert_eq!(apportion(0, &[1.0]), vec![0]);
        for total in [1, 7, 99, 500] {
            let w = [0.3, 0.01, 2.2, 0.0, 5.0];
            assert_eq!(apportion(total, &w).iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn pool_indexes_categories() {
        let s = toy_set(&[3, 5], &[("x", GroupKind::TargetUnknown, 2)], Split::Val);
        let pool = Pool::build(&s, Split::Val).unwrap();
        let freqs = pool.category_frequencies();
        assert_eq!(freqs.len(), 3);
        let total: f64 = freqs.iter().map(|(_, f)| f).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(freqs[1].1, 0.5);
        assert_eq!(pool.dominant_class(), Some(1));
        assert!(pool.has_unknown());
        assert!(!pool.has_non_target());
        assert_eq!(Pool::build(&s, Split::Test), Err(CommunityError::EmptySplit(Split::Test)));
    }

    #[test]
    fn balanced_ratio_zero() {
        let s = toy_set(&[10, 20, 30, 40], &[], Split::Val);
        let pool = Pool::build(&s, Split::Val).unwrap();
        let c = sample_community(&pool, &spec(CommunityType::Balanced, 0.0), 0).unwrap();
        assert_eq!(c.true_counts, vec![125, 125, 125, 125, 0]);
        assert_eq!(c.true_abundance.unknown(), 0.0);
        // the pool has no unknowns, so a positive ratio is unsupported
        assert!(matches!(
            sample_community(&pool, &spec(CommunityType::Balanced, 0.1), 0),
            Err(CommunityError::Unsupported { .. })
        ));
    }

    #[test]
    fn dominant_allocation() {
        let s = toy_set(&[10, 50, 30], &[("x", GroupKind::TargetUnknown, 5)], Split::Val);
        let pool = Pool::build(&s, Split::Val).unwrap();
        let c = sample_community(&pool, &spec(CommunityType::DominantTaxa, 0.2), 0).unwrap();
        assert_eq!(c.true_counts[3], 100);
        assert_eq!(c.true_counts[1], 300);
        assert_eq!(c.true_counts[0] + c.true_counts[2], 100);
        // the remaining quarter follows the other classes' frequencies (10:30)
        assert_eq!(c.true_counts[0], 25);
    }

    #[test]
    fn non_target_requires_samples() {
        let s = toy_set(&[10], &[("x", GroupKind::TargetUnknown, 5)], Split::Val);
        let pool = Pool::build(&s, Split::Val).unwrap();
        let err = sample_community(&pool, &spec(CommunityType::NonTargetEnriched, 0.2), 0).unwrap_err();
        assert!(err.to_string().contains("non-target"));
        // ratio 0 needs no unknown portion
        assert!(sample_community(&pool, &spec(CommunityType::NonTargetEnriched, 0.0), 0).is_ok());
    }

    #[test]
    fn non_target_draws_only_non_target() {
        let s = toy_set(
            &[10],
            &[("x", GroupKind::TargetUnknown, 5), ("bub", GroupKind::NonTargetUnknown, 3)],
            Split::Val,
        );
        let pool = Pool::build(&s, Split::Val).unwrap();
        let c = sample_community(&pool, &spec(CommunityType::NonTargetEnriched, 0.4), 0).unwrap();
        let unknown_members: Vec<_> = c
            .members
            .iter()
            .filter(|&&i| s.records[i].group.is_unknown())
            .collect();
        assert_eq!(unknown_members.len(), 200);
        assert!(unknown_members.iter().all(|&&i| s.records[i].category == "bub"));
    }

    #[test]
    fn spec_validation() {
        let mut sp = spec(CommunityType::Empirical, 0.1);
        assert!(sp.validate().is_err());
        sp.unknown_ratio = UnknownRatio::EMPIRICAL;
        assert!(sp.validate().is_ok());
        let mut sp = spec(CommunityType::Balanced, 0.1);
        sp.unknown_ratio = UnknownRatio::EMPIRICAL;
        assert!(sp.validate().is_err());
        let mut sp = spec(CommunityType::Balanced, 0.1);
        sp.size = 0;
        assert!(sp.validate().is_err());
        sp.size = 5;
        sp.replicates = 0;
        assert!(sp.validate().is_err());
        assert!(spec(CommunityType::Balanced, 1.5).validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_seed_and_replicates() {
        let a = spec(CommunityType::LongTail, 0.2);
        let b = CommunitySpec {
            seed: 7,
            replicates: 3,
            ..a
        };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), spec(CommunityType::LongTail, 0.4).fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }

    #[test]
    fn ratio_serializes_as_number_or_tag() {
        assert_eq!(serde_json::to_string(&UnknownRatio::Fixed(0.2)).unwrap(), "0.2");
        assert_eq!(serde_json::to_string(&UnknownRatio::EMPIRICAL).unwrap(), "\"empirical\"");
        let back: UnknownRatio = serde_json::from_str("\"empirical\"").unwrap();
        assert_eq!(back, UnknownRatio::EMPIRICAL);
    }

    #[test]
    fn manifest_roundtrip_and_tamper_detection() {
        let s = toy_set(&[10, 20], &[("x", GroupKind::TargetUnknown, 5)], Split::Val);
        let pool = Pool::build(&s, Split::Val).unwrap();
        let mut sp = spec(CommunityType::Balanced, 0.2);
        sp.size = 20;
        sp.replicates = 2;
        let suite = generate_suite(&pool, &[sp], &[42, 43]).unwrap();
        assert_eq!(suite.communities.len(), 4);
        let m = suite.to_manifest(&s, Provenance::new(None));
        let text = m.to_json();
        let parsed = SuiteManifest::parse(&text).unwrap();
        let back = CommunitySuite::from_manifest(&parsed, &s).unwrap();
        assert_eq!(back, suite);

        let mut bad = parsed.clone();
        bad.communities[0].true_counts[0] += 1;
        bad.communities[0].true_counts[1] -= 1;
        assert!(CommunitySuite::from_manifest(&bad, &s).is_err());
        let mut bad = parsed;
        bad.communities[1].members[0] = "nope".into();
        assert!(CommunitySuite::from_manifest(&bad, &s).is_err());
    }
}
