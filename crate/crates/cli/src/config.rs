//! Run configuration.
//!
//! Precedence, highest first: command-line flags, the `OSCD_OUTPUT_ROOT`
//! environment variable (output directory only), the config file, built-in
//! defaults. The effective config is echoed to `<out>/config.toml`.

use std::path::{Path, PathBuf};

use oscd_core::calibrate::{Objective, QuantileSource, StrategyFamily, DEFAULT_QUANTILES};
use oscd_core::communities::{
    CommunitySpec, CommunityType, UnknownRatio, CONTROLLED_RATIOS, DEFAULT_REPLICATES, DEFAULT_SEEDS, DEFAULT_SIZE,
    DOMINANT_SHARE,
};
use oscd_core::community_metrics::{DiversityDomain, MetricOptions};
use oscd_core::ingest::Split;
use oscd_core::robustness::RecommendationRule;
use oscd_core::scoring::{Method, ScoreParams, DEFAULT_SHRINKAGE, PINV_RELATIVE_CUTOFF};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const OUTPUT_ROOT_ENV: &str = "OSCD_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub methods: Vec<Method>,
    pub temperature: f64,
    pub shrinkage: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            temperature: 1.0,
            shrinkage: DEFAULT_SHRINKAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunityConfig {
    pub types: Vec<CommunityType>,
    /// Ratios for every non-empirical type; `empirical` always uses the pool ratio.
    pub ratios: Vec<f64>,
    pub size: usize,
    pub replicates: usize,
    pub seeds: Vec<u64>,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        Self {
            types: CommunityType::ALL.to_vec(),
            ratios: CONTROLLED_RATIOS.to_vec(),
            size: DEFAULT_SIZE,
            replicates: DEFAULT_REPLICATES,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

impl CommunityConfig {
    /// Spec grid for one split, seed left at its default (set per suite).
    pub fn specs(&self, split: Split) -> Vec<CommunitySpec> {
        let mut out = Vec::new();
        for &t in &self.types {
            let ratios: Vec<UnknownRatio> = if t == CommunityType::Empirical {
                vec![UnknownRatio::EMPIRICAL]
            } else {
                self.ratios.iter().map(|&r| UnknownRatio::Fixed(r)).collect()
            };
            for r in ratios {
                out.push(CommunitySpec {
                    size: self.size,
                    replicates: self.replicates,
                    ..CommunitySpec::new(t, r, split)
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Methods to scan; empty means every method in the score table.
    pub methods: Vec<String>,
    pub n_quantiles: usize,
    pub quantile_source: QuantileSource,
    pub strategies: Vec<StrategyFamily>,
    pub objectives: Vec<Objective>,
    pub diversity_domain: DiversityDomain,
    pub top_k: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            methods: Vec::new(),
            n_quantiles: DEFAULT_QUANTILES,
            quantile_source: QuantileSource::Validation,
            strategies: StrategyFamily::ALL.to_vec(),
            objectives: Objective::ALL.to_vec(),
            diversity_domain: DiversityDomain::IncludeUnknownBin,
            top_k: 3,
        }
    }
}

impl CalibrationConfig {
    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            diversity_domain: self.diversity_domain,
            top_k: self.top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub delta: f64,
    pub alpha: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        let r = RecommendationRule::default();
        Self {
            delta: r.delta,
            alpha: r.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// `"mismatch"` for the built-in scenario, otherwise a scenario JSON path.
    pub scenario: String,
    pub n_per_split: usize,
    /// Overrides the scenario's own seed when set.
    pub seed: Option<u64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenario: "mismatch".into(),
            n_per_split: 10_000,
            seed: None,
        }
    }
}

/// Rules built into the tool. Echoed for completeness; a config may restate
/// them but cannot change them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedRules {
    pub decision_rule: String,
    pub tie_break: String,
    pub fixed_recall_target: f64,
    pub fpr_unknown_recall_target: f64,
    pub quantile_rule: String,
    pub dominant_share: f64,
    pub slot_rounding: String,
    pub pinv_relative_cutoff: f64,
    pub covariance_divisor: String,
    pub rng: String,
}

impl Default for FixedRules {
    fn default() -> Self {
        Self {
            decision_rule: "score > threshold => unknown".into(),
            tie_break: "lowest grid index".into(),
            fixed_recall_target: oscd_core::calibrate::TARGET_KNOWN_RECALL,
            fpr_unknown_recall_target: oscd_core::calibrate::TARGET_UNKNOWN_RECALL,
            quantile_rule: "type 7 (linear interpolation), levels i/(n-1) plus extrema".into(),
            dominant_share: DOMINANT_SHARE,
            slot_rounding: "round half to even; largest remainder, ties to lower index".into(),
            pinv_relative_cutoff: PINV_RELATIVE_CUTOFF,
            covariance_divisor: "N - K".into(),
            rng: "pcg64 seeded by splitmix64(seed, spec fingerprint, replicate)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub require_disjoint_unknowns: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            require_disjoint_unknowns: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input manifest; defaults to `<out>/inputs/manifest.jsonl` (where `simulate` writes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub validation: ValidationConfig,
    pub scoring: ScoringConfig,
    pub communities: CommunityConfig,
    pub calibration: CalibrationConfig,
    pub robustness: RobustnessConfig,
    pub simulate: SimulateConfig,
    pub fixed: FixedRules,
}

#[derive(Serialize)]
struct FingerprintView<'a> {
    manifest: &'a Option<PathBuf>,
    validation: &'a ValidationConfig,
    scoring: &'a ScoringConfig,
    communities: &'a CommunityConfig,
    calibration: &'a CalibrationConfig,
    robustness: &'a RobustnessConfig,
    simulate: &'a SimulateConfig,
    fixed: &'a FixedRules,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.fixed != FixedRules::default() {
            return bad("[fixed] rules are built in and cannot be changed");
        }
        if self.scoring.methods.is_empty() {
            return bad("scoring.methods is empty");
        }
        if !(self.scoring.temperature > 0.0 && self.scoring.temperature.is_finite()) {
            return bad("scoring.temperature must be positive");
        }
        if !(self.scoring.shrinkage >= 0.0 && self.scoring.shrinkage.is_finite()) {
            return bad("scoring.shrinkage must be non-negative");
        }
        let c = &self.communities;
        if c.types.is_empty() || c.seeds.is_empty() {
            return bad("communities.types and communities.seeds must be non-empty");
        }
        if c.types.iter().any(|&t| t != CommunityType::Empirical) && c.ratios.is_empty() {
            return bad("communities.ratios is empty");
        }
        if c.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("communities.ratios must lie in [0, 1]");
        }
        if c.size == 0 || c.replicates == 0 {
            return bad("communities.size and communities.replicates must be positive");
        }
        let mut seeds = c.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != c.seeds.len() {
            return bad("communities.seeds contains duplicates");
        }
        let k = &self.calibration;
        if k.n_quantiles < 2 {
            return bad("calibration.n_quantiles must be at least 2");
        }
        if k.top_k == 0 {
            return bad("calibration.top_k must be positive");
        }
        if k.strategies.is_empty() {
            return bad("calibration.strategies is empty");
        }
        if k.strategies.contains(&StrategyFamily::ObjectiveAware) && k.objectives.is_empty() {
            return bad("objective_aware requested but calibration.objectives is empty");
        }
        let r = &self.robustness;
        if !(r.delta >= 0.0 && r.alpha > 0.0 && r.alpha <= 1.0) {
            return bad("robustness.delta must be >= 0 and alpha in (0, 1]");
        }
        if self.simulate.n_per_split == 0 {
            return bad("simulate.n_per_split must be positive");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive");
        }
        Ok(())
    }

    pub fn score_params(&self) -> ScoreParams {
        ScoreParams {
            temperature: self.scoring.temperature,
            shrinkage: self.scoring.shrinkage,
        }
    }

    pub fn rule(&self) -> RecommendationRule {
        RecommendationRule {
            delta: self.robustness.delta,
            alpha: self.robustness.alpha,
        }
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON of every field
    /// that affects results (output location and worker count excluded).
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            manifest: &self.manifest,
            validation: &self.validation,
            scoring: &self.scoring,
            communities: &self.communities,
            calibration: &self.calibration,
            robustness: &self.robustness,
            simulate: &self.simulate,
            fixed: &self.fixed,
        };
        let json = serde_json::to_vec(&view).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Output directory after applying flag > env > config precedence.
    pub fn resolve_output(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        if let Some(p) = flag {
            return Ok(p.to_path_buf());
        }
        if let Some(p) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
            return Ok(PathBuf::from(p));
        }
        self.output_dir
            .clone()
            .ok_or_else(|| CliError::Config(format!("no output directory: pass --out, set {OUTPUT_ROOT_ENV}, or set output_dir")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_changed_rules() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(CliError::Config(_))));
        assert!(RunConfig::parse("[fixed]\ndominant_share = 0.5\n").is_err());
        assert!(RunConfig::parse("[communities]\nseeds = [1, 1]\n").is_err());
        assert!(RunConfig::parse("[scoring]\nmethods = [\"bogus\"]\n").is_err());
    }

    #[test]
    fn fingerprint_ignores_location_and_jobs() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: Some("/tmp/x".into()),
            jobs: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = RunConfig::default();
        c.communities.size = 100;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn spec_grid_shape() {
        let c = CommunityConfig::default();
        let specs = c.specs(Split::Val);
        // five ratio-driven types × four ratios, plus one empirical spec
        assert_eq!(specs.len(), 21);
        assert!(specs.iter().all(|s| s.size == 500 && s.replicates == 20));
    }
}
