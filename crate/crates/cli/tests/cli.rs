use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oscd_cli::error::exit;
use oscd_core::ingest::Split;
use oscd_core::synthetic::{generate, mismatch_scenario};

const SMALL: &str = r#"
[simulate]
n_per_split = 1500

[communities]
types = ["balanced", "dominant_taxa", "empirical"]
ratios = [0.0, 0.2]
size = 100
replicates = 3
seeds = [42, 43]

[calibration]
n_quantiles = 51
"#;

fn oscd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscd"))
        .args(args)
        .env_remove("OSCD_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_and_calibrate(dir: &Path) -> PathBuf {
    let cfg = write(dir, "run.toml", SMALL);
    let out = dir.join("out");
    let o = oscd(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = oscd(&["calibrate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn calibrate_writes_full_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let out = simulate_and_calibrate(tmp.path());
    for rel in [
        "config.toml",
        "run.log",
        "inputs/manifest.jsonl",
        "scores/scores.tsv",
        "communities/val_seed42.json",
        "communities/test_seed43.json",
        "scans/mahalanobis_seed42.tsv",
        "results/energy_seed43.json",
        "reports/table3_strategies.tsv",
        "reports/table6_recommendations.tsv",
        "reports/summary.json",
    ] {
        assert!(out.join(rel).is_file(), "missing {rel}");
    }
    let echoed = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(!echoed.contains("output_dir"));
    let table = fs::read_to_string(out.join("reports/table3_strategies.tsv")).unwrap();
    assert!(table.contains("# config_fingerprint: "));
    assert!(table.contains("closed_set"));
    let scan = fs::read_to_string(out.join("scans/mahalanobis_seed42.tsv")).unwrap();
    assert!(scan.lines().last().unwrap().starts_with("closed_set"));
}

#[test]
fn report_reproduces_calibrate_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = simulate_and_calibrate(tmp.path());
    let before = fs::read(out.join("reports/table4_direction.tsv")).unwrap();
    fs::remove_dir_all(out.join("reports")).unwrap();
    let o = oscd(&["report", "--config", s(&tmp.path().join("run.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(out.join("reports/table4_direction.tsv")).unwrap(), before);
}

#[test]
fn score_computes_every_method_from_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scn = mismatch_scenario();
    scn.emit_features = true;
    let (set, _) = generate(&scn, 300).unwrap();
    let manifest = write(tmp.path(), "m.jsonl", &set.to_manifest_string());
    let out = tmp.path().join("out");
    let o = oscd(&["score", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("scores/scores.tsv")).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    for m in ["msp", "energy", "mahalanobis"] {
        assert!(header.contains(m), "{header}");
    }
    let rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, set.split(Split::Val).len() + set.split(Split::Test).len());
}

#[test]
fn validate_reports_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (set, _) = generate(&mismatch_scenario(), 200).unwrap();
    let manifest = write(tmp.path(), "m.jsonl", &set.to_manifest_string());
    let o = oscd(&["validate", s(&manifest)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let bad = write(dir, "bad.toml", "[communities]\nsizes = 3\n");
    assert_eq!(code(&oscd(&["score", "--config", s(&bad), "--out", s(dir)])), exit::CONFIG);

    let fixed = write(dir, "fixed.toml", "[fixed]\ndominant_share = 0.5\n");
    assert_eq!(code(&oscd(&["score", "--config", s(&fixed), "--out", s(dir)])), exit::CONFIG);

    // no output location anywhere
    assert_eq!(code(&oscd(&["score"])), exit::CONFIG);

    let garbage = write(dir, "garbage.jsonl", "{not json\n");
    assert_eq!(code(&oscd(&["validate", s(&garbage)])), exit::PARSE);

    assert_eq!(code(&oscd(&["validate", s(&dir.join("absent.jsonl"))])), exit::IO);

    // scores requested before they exist
    let (set, _) = generate(&mismatch_scenario(), 200).unwrap();
    let manifest = write(dir, "m.jsonl", &set.to_manifest_string());
    let o = oscd(&["scan", "--manifest", s(&manifest), "--out", s(&dir.join("fresh"))]);
    assert_eq!(code(&o), exit::IO, "{}", stderr(&o));
}

#[test]
fn empty_test_split_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let out = tmp.path().join("out");
    assert_eq!(code(&oscd(&["simulate", "--config", s(&cfg), "--out", s(&out)])), 0);
    let path = out.join("inputs/manifest.jsonl");
    let kept: Vec<String> = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"split\":\"test\""))
        .map(String::from)
        .collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let o = oscd(&["calibrate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), exit::VALIDATION, "{}", stderr(&o));
    assert!(stderr(&o).contains("test split is empty"));
}

#[test]
fn sample_strategies_without_val_unknowns_are_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scn = mismatch_scenario();
    scn.val_unknown_fraction = 0.0;
    let scenario = write(tmp.path(), "scn.json", &serde_json::to_string(&scn).unwrap());
    let cfg = write(
        tmp.path(),
        "run.toml",
        &format!(
            "[simulate]\nscenario = {:?}\nn_per_split = 600\n\n[communities]\ntypes = [\"balanced\"]\nratios = [0.0]\nsize = 50\nreplicates = 2\nseeds = [1]\n\n[calibration]\nstrategies = [\"detection_f1_max\"]\n",
            s(&scenario)
        ),
    );
    let out = tmp.path().join("out");
    let o = oscd(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = oscd(&["calibrate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), exit::INFEASIBLE, "{}", stderr(&o));
}

#[test]
fn unsupported_community_spec_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scn = mismatch_scenario();
    scn.val_unknown_fraction = 0.0;
    let scenario = write(tmp.path(), "scn.json", &serde_json::to_string(&scn).unwrap());
    let out = tmp.path().join("out");
    let o = oscd(&["simulate", "--scenario", s(&scenario), "--n-per-split", "300", "--out", s(&out)]);
    assert_eq!(code(&o), exit::VALIDATION, "{}", stderr(&o));
    assert!(stderr(&o).contains("no unknown samples"), "{}", stderr(&o));
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_oscd"))
        .args(["simulate", "--config", s(&cfg)])
        .env("OSCD_OUTPUT_ROOT", tmp.path().join("env-out"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("env-out/inputs/manifest.jsonl").is_file());
}

#[test]
fn simulate_refuses_an_explicit_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = oscd(&["simulate", "--manifest", "x.jsonl", "--out", s(tmp.path())]);
    assert_eq!(code(&o), exit::CONFIG);
}
