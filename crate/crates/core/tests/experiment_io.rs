use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tfcc_core::config::{parse_scenario, ConfigError};
use tfcc_core::experiment::{run_experiment, ExperimentError, ExperimentSpec, SUMMARY_FILE};
use tfcc_core::{Protocol, ScenarioConfig};

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn small_spec(seeds: &str, variants: &str) -> String {
    format!(
        "seeds = {seeds}\n[scenario]\nduration_s = 30.0\nwarmup_s = 10.0\n{variants}"
    )
}

const TWO_VARIANTS: &str = "[[variants]]\nprotocol = \"TFCC\"\n[[variants]]\nprotocol = \"NO_TRUST\"\n";

fn digests(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, Sha256::digest(fs::read(&path).unwrap()).to_vec())
        })
        .collect()
}

#[test]
fn bundled_scenario_is_the_field_experiment() {
    let cfg = parse_scenario(repo_file("scenarios/field.scenario")).unwrap();
    assert_eq!(cfg.node_count, 100);
    assert_eq!((cfg.field_width_m, cfg.field_height_m), (50.0, 50.0));
    assert_eq!(cfg.malicious_fraction, 0.5);
    assert_eq!(cfg.trust_threshold, 0.5);
    assert_eq!(cfg.duration_s, 120.0);
}

#[test]
fn empty_file_gives_defaults_and_bad_values_name_their_key() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.scenario");
    fs::write(&empty, "").unwrap();
    assert_eq!(parse_scenario(&empty).unwrap(), ScenarioConfig::default());

    let bad = dir.path().join("bad.scenario");
    fs::write(&bad, "malicious_fraction = 1.5\n").unwrap();
    let err = parse_scenario(&bad).unwrap_err();
    assert!(matches!(err, ConfigError::OutOfRange { key: "malicious_fraction", .. }), "{err}");
    assert!(err.to_string().contains("malicious_fraction"));

    assert!(matches!(parse_scenario(dir.path().join("missing")), Err(ConfigError::Io { .. })));
}

#[test]
fn scenario_round_trips() {
    let mut cfg = parse_scenario(repo_file("scenarios/field.scenario")).unwrap();
    cfg.protocol = Protocol::NoRateControl;
    cfg.behavior_mix.delayer = 0.25;
    let text = cfg.to_toml_string();
    let again = ScenarioConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(again.to_toml_string(), text);
}

#[test]
fn bundled_experiment_resolves() {
    let e = ExperimentSpec::load(repo_file("scenarios/throughput.experiment.toml")).unwrap();
    assert_eq!(e.seeds, (1..=10).collect::<Vec<u64>>());
    let names: Vec<&str> = e.variants.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["TFCC", "NO_TRUST", "NO_RATE_CONTROL"]);
    assert!(e.variants.iter().all(|v| v.config.node_count == 100));
}

#[test]
fn one_variant_one_seed_writes_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::from_toml_str(&small_spec("[3]", "[[variants]]\nprotocol = \"TFCC\"\n")).unwrap();
    let e = spec.resolve(Path::new(".")).unwrap();
    let report = run_experiment(&e, dir.path()).unwrap();
    assert_eq!(report.runs.len(), 1);
    let mut files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["TFCC_seed3.csv", SUMMARY_FILE]);
}

fn column(headers: &csv::StringRecord, name: &str) -> usize {
    headers.iter().position(|h| h == name).unwrap()
}

/// Reads a run CSV and returns (steady-state throughput, final throughput).
fn recompute_run(path: &Path, warmup_s: f64) -> (f64, f64) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().clone();
    let (t, g, d, n) = (
        column(&h, "time_s"),
        column(&h, "generated"),
        column(&h, "delivered"),
        column(&h, "normalized_throughput"),
    );
    let rows: Vec<(f64, u64, u64, f64)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[t].parse().unwrap(), rec[g].parse().unwrap(), rec[d].parse().unwrap(), rec[n].parse().unwrap())
        })
        .collect();
    let base = rows.iter().filter(|r| r.0 <= warmup_s).last().map_or((0, 0), |r| (r.1, r.2));
    let last = rows.last().unwrap();
    ((last.2 - base.1) as f64 / (last.1 - base.0) as f64, last.3)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

#[test]
fn summary_matches_recomputation_from_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::from_toml_str(&small_spec("[1, 2, 3]", TWO_VARIANTS)).unwrap();
    let e = spec.resolve(Path::new(".")).unwrap();
    run_experiment(&e, dir.path()).unwrap();

    let mut summary = csv::Reader::from_path(dir.path().join(SUMMARY_FILE)).unwrap();
    let h = summary.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let variant = &row[column(&h, "variant")];
        let per_run: Vec<(f64, f64)> = [1, 2, 3]
            .iter()
            .map(|s| recompute_run(&dir.path().join(format!("{variant}_seed{s}.csv")), 10.0))
            .collect();
        let (ms, ss) = mean_sd(&per_run.iter().map(|r| r.0).collect::<Vec<_>>());
        let (mf, sf) = mean_sd(&per_run.iter().map(|r| r.1).collect::<Vec<_>>());
        let got = |name: &str| row[column(&h, name)].parse::<f64>().unwrap();
        assert_eq!(&row[column(&h, "runs")], "3");
        assert!((got("mean_steady_state_throughput") - ms).abs() <= 1e-12);
        assert!((got("stddev_steady_state_throughput") - ss).abs() <= 1e-12);
        assert!((got("mean_final_throughput") - mf).abs() <= 1e-12);
        assert!((got("stddev_final_throughput") - sf).abs() <= 1e-12);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let spec = ExperimentSpec::from_toml_str(&small_spec("[4, 5]", TWO_VARIANTS)).unwrap();
    let e = spec.resolve(Path::new(".")).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&e, a.path()).unwrap();
    run_experiment(&e, b.path()).unwrap();
    let (da, db) = (digests(a.path()), digests(b.path()));
    assert_eq!(da.len(), 5);
    assert_eq!(da, db);
}

#[test]
fn unwritable_output_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let spec = ExperimentSpec::from_toml_str(&small_spec("[1]", "[[variants]]\nprotocol = \"TFCC\"\n")).unwrap();
    let e = spec.resolve(Path::new(".")).unwrap();
    assert!(matches!(run_experiment(&e, &file.join("out")), Err(ExperimentError::Output { .. })));
}
