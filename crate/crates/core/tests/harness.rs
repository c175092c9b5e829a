use std::fs;
use std::path::Path;

use e91_core::harness::{parse_config, run_scenario, HarnessError, ScenarioConfig, ScenarioKind};
use e91_core::protocol::Verdict;

const SMALL: &str = r#"
scenario = "field"
seed = 4

[source]
pair_rate = 1e5
duration_s = 0.6
reference_phase = 2.9

[channel.alice]
transmittance = 0.5

[channel.bob]
delay_ps = 7_000_000

[detector.alice]
jitter_fwhm_ps = 200
dark_rate = 2_000

[detector.bob]
jitter_fwhm_ps = 70
dead_time_ps = 40_000

[protocol]
block_s = 0.2
delay_search_ps = 20_000_000
"#;

fn small() -> ScenarioConfig {
    parse_config(SMALL).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn config_errors_name_every_offending_key() {
    let err = parse_config("scenario = \"ideal\"\n[source]\npair_rte = 5\n").unwrap_err();
    assert!(err.to_string().contains("source"), "{err}");
    assert!(err.to_string().contains("pair_rte"), "{err}");

    let err = parse_config("[detector.bob]\nefficiency = \"high\"\n").unwrap_err();
    assert_eq!(err.issues[0].path, "detector.bob.efficiency");

    let err = parse_config("[source]\npair_rate = -1\n[channel.alice]\ntransmittance = 1.5\n[protocol]\nwindow_ps = 0\n")
        .unwrap_err();
    let paths: Vec<&str> = err.issues.iter().map(|i| i.path.as_str()).collect();
    for p in ["source.pair_rate", "channel.alice.transmittance", "protocol.window_ps"] {
        assert!(paths.contains(&p), "{paths:?}");
    }

    assert_eq!(parse_config("seed = [").unwrap_err().issues[0].path, "<toml>");
    assert!(parse_config("scenario = \"nope\"").is_err());
}

#[test]
fn hash_tracks_physics_but_not_seed_or_destination() {
    let base = small();
    let mut other = base.clone();
    other.seed = 99;
    other.output_dir = Some("elsewhere".into());
    assert_eq!(base.hash(), other.hash());
    other.detector.bob.dark_rate = 1.0;
    assert_ne!(base.hash(), other.hash());
    assert_eq!(base.hash().len(), 64);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cfg = small();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r1 = run_scenario(&cfg, d1.path()).unwrap();
    run_scenario(&cfg, d2.path()).unwrap();
    let (f1, f2) = (read_all(d1.path()), read_all(d2.path()));
    assert!(f1.iter().any(|(n, _)| n == "report.csv"));
    assert_eq!(f1, f2);
    assert_eq!(r1.report.as_ref().unwrap().blocks.len(), 3);

    let mut reseeded = cfg.clone();
    reseeded.seed += 1;
    let d3 = tempfile::tempdir().unwrap();
    run_scenario(&reseeded, d3.path()).unwrap();
    let f3 = read_all(d3.path());
    let report = |f: &[(String, Vec<u8>)]| f.iter().find(|(n, _)| n == "report.csv").unwrap().1.clone();
    assert_ne!(report(&f1), report(&f3));
}

#[test]
fn manifest_lists_outputs_and_hash() {
    let mut cfg = small();
    cfg.dump_tags = true;
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    let m = manifest(dir.path());
    assert_eq!(m["scenario"], "field");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config_hash"], cfg.hash());
    let listed: Vec<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(outcome.files.last().map(String::as_str), Some("manifest.json"));
    assert_eq!(listed, outcome.files[..outcome.files.len() - 1]);
    for name in ["report.csv", "coincidences.csv", "estimates.csv", "alice.tags", "bob.tags"] {
        assert!(listed.iter().any(|n| n == name), "{listed:?}");
        assert!(dir.path().join(name).is_file());
    }
}

#[test]
fn report_csv_has_one_row_per_block_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_scenario(&small(), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[0].starts_with("block_id,S,S_err,qber"));
    assert!(lines[4].starts_with("all,"));
    assert_eq!(outcome.verdict(), Some(Verdict::Accept));
}

#[test]
fn phase_sweep_outputs_one_row_per_point() {
    let mut cfg = small();
    cfg.scenario = ScenarioKind::PhaseSweep;
    cfg.source.pair_rate = 5e4;
    cfg.detector.alice.dark_rate = 0.0;
    cfg.sweep.points = 5;
    cfg.sweep.start = 0.0;
    cfg.sweep.stop = std::f64::consts::PI;
    cfg.sweep.point_duration_s = Some(1.0);
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    assert_eq!(outcome.sweep.len(), 5);
    let text = fs::read_to_string(dir.path().join("phase_sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
    for p in &outcome.sweep {
        let ideal = std::f64::consts::SQRT_2 * (1.0 - p.phase.cos());
        assert!((p.report.s - ideal).abs() < 4.0 * p.report.s_err, "{p:?}");
    }
}

#[test]
fn invalid_configs_do_not_create_outputs() {
    let mut cfg = small();
    cfg.protocol.window_ps = 0;
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out");
    match run_scenario(&cfg, &target) {
        Err(HarnessError::Config(e)) => assert_eq!(e.issues[0].path, "protocol.window_ps"),
        other => panic!("{other:?}"),
    }
    assert!(!target.exists());
}
