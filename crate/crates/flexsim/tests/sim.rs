mod common;

use common::{preset, ADAPTIVE, COMPARE, NOMINAL, PD, PTC};
use flexsim::control::ControllerKind;
use flexsim::sim::{run_controller, run_scenario, ConfigError, ScenarioConfig};
use std::fs;

fn short(text: &str, t_f: f64) -> ScenarioConfig {
    let mut cfg = preset(text);
    cfg.integration.t_f = t_f;
    cfg
}

fn invalid(cfg: &ScenarioConfig) -> Vec<String> {
    match cfg.validate() {
        Err(ConfigError::Invalid(errs)) => errs,
        other => panic!("expected validation errors, got {other:?}"),
    }
}

#[test]
fn presets_validate() {
    for text in [NOMINAL, ADAPTIVE, PTC, PD, COMPARE] {
        preset(text).validate().unwrap();
    }
}

#[test]
fn presets_on_disk_load() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ScenarioConfig::load(&path).unwrap();
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn inverted_bounds_are_rejected() {
    let mut cfg = preset(ADAPTIVE);
    cfg.adaptation.config.bound = -0.1;
    assert!(invalid(&cfg).iter().any(|e| e.contains("lower bound exceeds upper bound")));
    cfg.adaptation.config.bound = 1.0;
    assert!(invalid(&cfg).iter().any(|e| e.contains("bound")));
}

#[test]
fn non_symmetric_gain_is_rejected() {
    let mut cfg = preset(NOMINAL);
    let mut rows = [[0.0; 6]; 6];
    rows[5][5] = 200.0;
    rows[4][5] = 1.0;
    cfg.gains.twist[1].matrix = Some(rows);
    assert!(invalid(&cfg).iter().any(|e| e.contains("not symmetric")));
}

#[test]
fn errors_are_aggregated() {
    let mut cfg = preset(NOMINAL);
    cfg.integration.dt = 0.0;
    cfg.links[0].length = -1.0;
    cfg.gains.torque_limit = 0.0;
    assert_eq!(invalid(&cfg).len(), 3);
}

#[test]
fn unknown_keys_are_parse_errors() {
    let text = format!("{NOMINAL}\n[bogus]\nx = 1\n");
    assert!(matches!(ScenarioConfig::from_toml(&text), Err(ConfigError::Parse(_))));
}

#[test]
fn zero_duration_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_controller(&short(NOMINAL, 0.0), ControllerKind::Slpc, Some(dir.path())).unwrap();
    assert!(out.summary.completed);
    for name in ["log.csv", "deformation.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# schema: "), "{name}");
        assert!(lines[1].starts_with("t,"), "{name}");
        assert!(lines.len() <= 3, "{name}: {} lines", lines.len());
    }
    assert!(dir.path().join("summary.toml").exists());
}

#[test]
fn fixed_seed_reproduces_bytes() {
    let mut cfg = short(ADAPTIVE, 0.05);
    cfg.adaptation.config.noise = 0.01;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_controller(&cfg, ControllerKind::SlpcAdaptive, Some(a.path())).unwrap();
    run_controller(&cfg, ControllerKind::SlpcAdaptive, Some(b.path())).unwrap();
    for name in ["log.csv", "deformation.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    cfg.seed += 1;
    let c = tempfile::tempdir().unwrap();
    run_controller(&cfg, ControllerKind::SlpcAdaptive, Some(c.path())).unwrap();
    assert_ne!(fs::read(a.path().join("log.csv")).unwrap(), fs::read(c.path().join("log.csv")).unwrap());
}

#[test]
fn comparison_emits_three_runs_on_one_reference() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = run_scenario(&short(COMPARE, 0.1), Some(dir.path())).into_iter().map(Result::unwrap).collect();
    let kinds: Vec<_> = runs.iter().map(|r| r.controller).collect();
    assert_eq!(kinds, vec![ControllerKind::Slpc, ControllerKind::Ptc, ControllerKind::Pd]);
    for r in &runs {
        // the reference is corrected by each run's own deflection, which sits at round-off here
        for (a, b) in r.log.joint_reference.iter().zip(&runs[0].log.joint_reference) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        assert!(dir.path().join(r.controller.name()).join("log.csv").exists());
        assert_eq!(r.log.t.len(), runs[0].log.t.len());
    }
}

#[test]
fn log_columns_match_header() {
    let dir = tempfile::tempdir().unwrap();
    run_controller(&short(NOMINAL, 0.02), ControllerKind::Slpc, Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let width = rdr.headers().unwrap().len();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert!(rows.len() >= 20);
    assert!(rows.iter().all(|r| r.len() == width && r.iter().all(|x| x.parse::<f64>().is_ok())));
}
