//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets exercise, so the corpora stay meaningful as formats evolve.

use std::fs;
use std::path::PathBuf;

use oscd_cli::config::RunConfig;
use oscd_core::communities::SuiteManifest;
use oscd_core::ingest::{parse_samples, ManifestSchema};
use oscd_core::scoring::ScoreTable;
use oscd_core::synthetic::SyntheticScenario;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn manifest_seeds() {
    for (name, text) in seeds("manifest") {
        let parsed = parse_samples(&text, &ManifestSchema::default());
        if name.starts_with("bad_") || name.starts_with("unknown_") {
            assert!(parsed.is_err(), "{name} should be rejected");
        } else {
            let set = parsed.unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(parse_samples(&set.to_manifest_string(), &ManifestSchema::default()).unwrap(), set);
        }
    }
}

#[test]
fn score_table_seeds() {
    for (name, text) in seeds("score_table") {
        let t = ScoreTable::parse_tsv(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ScoreTable::parse_tsv(&t.to_tsv_string()).unwrap(), t);
    }
}

#[test]
fn suite_manifest_seeds() {
    for (name, text) in seeds("suite_manifest") {
        SuiteManifest::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn run_config_seeds() {
    for (name, text) in seeds("run_config") {
        let cfg = RunConfig::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap().fingerprint(), cfg.fingerprint());
    }
}

#[test]
fn scenario_seeds() {
    for (name, text) in seeds("scenario") {
        let scn: SyntheticScenario = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        scn.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
