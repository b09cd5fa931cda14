//! Subcommand implementations.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.toml        effective configuration (output location omitted)
//! run.log            timestamped command log, the only non-deterministic file
//! inputs/            simulated manifest and scenario (simulate only)
//! scores/            scores.tsv
//! communities/       {val,test}_seed<S>.json suite manifests
//! scans/             <method>_seed<S>.tsv threshold scans
//! results/           <method>_seed<S>.json strategy results
//! reports/           aggregate tables and curve data
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use oscd_core::calibrate::{
    check_invariants, expand_strategies, grid_for_method, select, ScanInputs, ScanTable, SettingBundle,
    StrategyResult,
};
use oscd_core::communities::{generate_suite, CommunitySuite, Pool, Provenance, SuiteManifest};
use oscd_core::community_metrics::CommunityMetricBundle;
use oscd_core::ingest::{load_samples, ManifestSchema, validate_splits, SampleSet, Split, ValidationReport};
use oscd_core::sample_metrics::ThresholdedConfusion;
use oscd_core::scoring::{build_score_table, ScoreTable};
use oscd_core::synthetic::{generate, mismatch_scenario, SyntheticScenario};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const TOOL: &str = "oscd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Resolved run: effective config, output root and config fingerprint.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub fingerprint: String,
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf) -> Self {
        let fingerprint = config.fingerprint();
        Self {
            config,
            out,
            fingerprint,
        }
    }

    pub fn path(&self, sub: &str, name: &str) -> PathBuf {
        self.out.join(sub).join(name)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.config
            .manifest
            .clone()
            .unwrap_or_else(|| self.path("inputs", "manifest.jsonl"))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(Some(self.fingerprint.clone()))
    }

    /// `# key: value` header lines identifying tool, version and config.
    pub fn header(&self) -> Vec<(String, String)> {
        vec![
            ("tool".into(), TOOL.into()),
            ("version".into(), VERSION.into()),
            ("config_fingerprint".into(), self.fingerprint.clone()),
        ]
    }

    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
        s.push('\n');
        self.write(path, s.as_bytes())
    }

    /// Appends one timestamped line to `run.log`.
    pub fn log(&self, message: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.out.join("run.log");
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        writeln!(f, "[{secs}] {message}").map_err(|e| CliError::io(&path, e))
    }

    /// Writes the effective config without location-only fields.
    pub fn echo_config(&self) -> Result<(), CliError> {
        let echoed = RunConfig {
            output_dir: None,
            jobs: None,
            ..self.config.clone()
        };
        let text = format!(
            "# effective configuration\n# tool: {TOOL} {VERSION}\n# config_fingerprint: {}\n{}",
            self.fingerprint,
            echoed.to_toml()
        );
        self.write(&self.out.join("config.toml"), text.as_bytes())
    }

    fn require(&self, path: &Path, hint: &str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::MissingInput {
                path: path.display().to_string(),
                hint: hint.to_string(),
            })
        }
    }

    pub fn load_manifest(&self) -> Result<SampleSet, CliError> {
        let path = self.manifest_path();
        self.require(&path, "set `manifest` in the config or run `oscd simulate` first")?;
        Ok(load_samples(&path, &ManifestSchema::default())?)
    }

    pub fn scores_path(&self) -> PathBuf {
        self.path("scores", "scores.tsv")
    }

    pub fn load_scores(&self) -> Result<ScoreTable, CliError> {
        let path = self.scores_path();
        self.require(&path, "run `oscd score` (or `oscd simulate`) first")?;
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(ScoreTable::parse_tsv(&text)?)
    }

    pub fn suite_path(&self, split: Split, seed: u64) -> PathBuf {
        self.path("communities", &format!("{}_seed{seed}.json", split.as_str()))
    }

    pub fn load_suite(&self, samples: &SampleSet, split: Split, seed: u64) -> Result<CommunitySuite, CliError> {
        let path = self.suite_path(split, seed);
        self.require(&path, "run `oscd communities` first")?;
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let m = SuiteManifest::parse(&text)?;
        if m.split != split {
            return Err(CliError::Validation(format!("{} holds a {} suite", path.display(), m.split)));
        }
        Ok(CommunitySuite::from_manifest(&m, samples)?)
    }

    pub fn scan_path(&self, method: &str, seed: u64) -> PathBuf {
        self.path("scans", &format!("{method}_seed{seed}.tsv"))
    }

    pub fn results_path(&self, method: &str, seed: u64) -> PathBuf {
        self.path("results", &format!("{method}_seed{seed}.json"))
    }

    /// Methods to calibrate: the configured list, or every scored method.
    pub fn calibration_methods(&self, table: &ScoreTable) -> Result<Vec<String>, CliError> {
        let wanted = &self.config.calibration.methods;
        if wanted.is_empty() {
            return Ok(table.methods.clone());
        }
        for m in wanted {
            if table.method_index(m).is_none() {
                return Err(CliError::Validation(format!("method {m:?} not in score table")));
            }
        }
        Ok(wanted.clone())
    }
}

pub fn cmd_validate(manifest: &Path, require_disjoint: bool) -> Result<ValidationReport, CliError> {
    if !manifest.exists() {
        return Err(CliError::MissingInput {
            path: manifest.display().to_string(),
            hint: "manifest not found".into(),
        });
    }
    let set = load_samples(manifest, &ManifestSchema::default())?;
    Ok(validate_splits(&set, require_disjoint)?)
}

fn stamp_scores(ctx: &Context, table: &mut ScoreTable) {
    for (k, v) in ctx.header() {
        table.meta.insert(k, v);
    }
}

pub fn cmd_score(ctx: &Context) -> Result<ScoreTable, CliError> {
    ctx.log("score")?;
    ctx.echo_config()?;
    let set = ctx.load_manifest()?;
    validate_splits(&set, ctx.config.validation.require_disjoint_unknowns)?;
    let mut table = build_score_table(&set, &ctx.config.scoring.methods, &ctx.config.score_params())?;
    stamp_scores(ctx, &mut table);
    ctx.write(&ctx.scores_path(), table.to_tsv_string().as_bytes())?;
    Ok(table)
}

pub fn cmd_communities(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    ctx.log("communities")?;
    ctx.echo_config()?;
    let set = ctx.load_manifest()?;
    let mut written = Vec::new();
    for split in [Split::Val, Split::Test] {
        let pool = Pool::build(&set, split)?;
        let specs = ctx.config.communities.specs(split);
        for &seed in &ctx.config.communities.seeds {
            let suite = generate_suite(&pool, &specs, &[seed])?;
            let manifest = suite.to_manifest(&set, ctx.provenance());
            let path = ctx.suite_path(split, seed);
            ctx.write(&path, manifest.to_json().as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

struct Loaded {
    set: SampleSet,
    table: ScoreTable,
    methods: Vec<String>,
}

fn load_inputs(ctx: &Context) -> Result<Loaded, CliError> {
    let set = ctx.load_manifest()?;
    if set.split(Split::Test).is_empty() {
        return Err(CliError::Validation("test split is empty".into()));
    }
    if set.split(Split::Val).is_empty() {
        return Err(CliError::Validation("val split is empty".into()));
    }
    let table = ctx.load_scores()?;
    let methods = ctx.calibration_methods(&table)?;
    Ok(Loaded { set, table, methods })
}

fn scan_one(ctx: &Context, inp: &Loaded, method: &str, seed: u64) -> Result<(ScanInputs, ScanTable), CliError> {
    let val = ctx.load_suite(&inp.set, Split::Val, seed)?;
    let test = ctx.load_suite(&inp.set, Split::Test, seed)?;
    let cal = &ctx.config.calibration;
    let inputs = ScanInputs::new(&inp.table, &inp.set, method, &val, &test, cal.metric_options())?;
    let grid = grid_for_method(&inp.table, method, cal.quantile_source, cal.n_quantiles)?;
    let scan = inputs.scan(&grid)?;
    let mut buf = Vec::new();
    let mut meta = ctx.header();
    meta.push(("seed".into(), seed.to_string()));
    scan.write_tsv(&mut buf, &meta).map_err(|e| CliError::Other(e.to_string()))?;
    ctx.write(&ctx.scan_path(method, seed), &buf)?;
    Ok((inputs, scan))
}

pub fn cmd_scan(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    ctx.log("scan")?;
    ctx.echo_config()?;
    let inp = load_inputs(ctx)?;
    let mut written = Vec::new();
    for method in &inp.methods {
        for &seed in &ctx.config.communities.seeds {
            scan_one(ctx, &inp, method, seed)?;
            written.push(ctx.scan_path(method, seed));
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub grid_index: usize,
    pub threshold: f64,
    pub val_known_recall: f64,
    pub val_detection_f1: f64,
    pub test_known_recall: f64,
    pub test_unknown_recall: f64,
    pub test_detection_f1: f64,
    pub mean_val_oscd: f64,
    pub mean_test_oscd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub val_confusion: ThresholdedConfusion,
    pub test_confusion: ThresholdedConfusion,
    pub val_metrics: CommunityMetricBundle,
    pub test_metrics: CommunityMetricBundle,
    pub test_by_setting: Vec<SettingBundle>,
}

/// Everything selected for one (method, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResults {
    pub provenance: Provenance,
    pub method: String,
    pub seed: u64,
    pub grid_size: usize,
    pub settings: Vec<String>,
    pub val_communities: usize,
    pub test_communities: usize,
    pub closed_set: Baseline,
    pub strategies: Vec<StrategyResult>,
    pub invariants: String,
    pub curve: Vec<CurvePoint>,
}

fn seed_results(ctx: &Context, scan: &ScanTable, seed: u64) -> Result<SeedResults, CliError> {
    let cal = &ctx.config.calibration;
    let strategies = expand_strategies(scan, &cal.strategies, &cal.objectives);
    let results = strategies
        .iter()
        .map(|s| select(scan, *s))
        .collect::<Result<Vec<_>, _>>()?;
    check_invariants(scan, &results)?;
    let b = &scan.baseline;
    Ok(SeedResults {
        provenance: ctx.provenance(),
        method: scan.method.clone(),
        seed,
        grid_size: scan.grid.grid_size,
        settings: scan.settings.iter().map(|s| s.label()).collect(),
        val_communities: scan.val_communities,
        test_communities: scan.test_communities,
        closed_set: Baseline {
            val_confusion: b.val_confusion,
            test_confusion: b.test_confusion,
            val_metrics: b.val_mean,
            test_metrics: b.test_mean,
            test_by_setting: scan
                .settings
                .iter()
                .zip(&b.test_by_setting)
                .filter_map(|(s, m)| {
                    m.map(|metrics| SettingBundle {
                        setting: s.label(),
                        metrics,
                    })
                })
                .collect(),
        },
        strategies: results,
        invariants: "ok".into(),
        curve: scan
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| CurvePoint {
                grid_index: i,
                threshold: r.threshold,
                val_known_recall: r.val_confusion.known_recall,
                val_detection_f1: r.val_confusion.detection_f1,
                test_known_recall: r.test_confusion.known_recall,
                test_unknown_recall: r.test_confusion.unknown_recall,
                test_detection_f1: r.test_confusion.detection_f1,
                mean_val_oscd: r.val_mean.oscd,
                mean_test_oscd: r.test_mean.oscd,
            })
            .collect(),
    })
}

pub fn cmd_calibrate(ctx: &Context) -> Result<Vec<SeedResults>, CliError> {
    ctx.log("calibrate")?;
    ctx.echo_config()?;
    let inp = load_inputs(ctx)?;
    let mut all = Vec::new();
    for method in &inp.methods {
        for &seed in &ctx.config.communities.seeds {
            let (_, scan) = scan_one(ctx, &inp, method, seed)?;
            let res = seed_results(ctx, &scan, seed)?;
            ctx.write_json(&ctx.results_path(method, seed), &res)?;
            all.push(res);
        }
    }
    crate::reports::write_reports(ctx, &inp.set, &inp.table, &all)?;
    Ok(all)
}

pub fn load_results(ctx: &Context, methods: &[String]) -> Result<Vec<SeedResults>, CliError> {
    let mut all = Vec::new();
    for method in methods {
        for &seed in &ctx.config.communities.seeds {
            let path = ctx.results_path(method, seed);
            ctx.require(&path, "run `oscd calibrate` first")?;
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let r: SeedResults = serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            all.push(r);
        }
    }
    Ok(all)
}

pub fn cmd_report(ctx: &Context) -> Result<(), CliError> {
    ctx.log("report")?;
    ctx.echo_config()?;
    let set = ctx.load_manifest()?;
    let table = ctx.load_scores()?;
    let methods = ctx.calibration_methods(&table)?;
    let all = load_results(ctx, &methods)?;
    crate::reports::write_reports(ctx, &set, &table, &all)
}

/// Built-in scenario name or a JSON scenario file.
pub fn load_scenario(spec: &str) -> Result<SyntheticScenario, CliError> {
    if spec == "mismatch" {
        return Ok(mismatch_scenario());
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::MissingInput {
            path: spec.to_string(),
            hint: "scenario must be \"mismatch\" or a scenario JSON file".into(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{spec}: {e}")))
}

/// Writes a synthetic manifest, its planted scores and the community suites.
pub fn cmd_simulate(ctx: &Context) -> Result<(), CliError> {
    if ctx.config.manifest.is_some() {
        return Err(CliError::Config(
            "simulate writes its own manifest under inputs/; leave `manifest` unset".into(),
        ));
    }
    ctx.log("simulate")?;
    ctx.echo_config()?;
    let sim = &ctx.config.simulate;
    let mut scenario = load_scenario(&sim.scenario)?;
    if let Some(seed) = sim.seed {
        scenario.seed = seed;
    }
    let (set, mut table) = generate(&scenario, sim.n_per_split)?;
    ctx.write_json(&ctx.path("inputs", "scenario.json"), &scenario)?;
    ctx.write(&ctx.manifest_path(), set.to_manifest_string().as_bytes())?;
    stamp_scores(ctx, &mut table);
    ctx.write(&ctx.scores_path(), table.to_tsv_string().as_bytes())?;
    cmd_communities(ctx)?;
    Ok(())
}
