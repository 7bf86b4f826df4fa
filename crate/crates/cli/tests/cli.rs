use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psdmap::io::{estimate_from_str, measurements_from_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psdmap"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn psdmap")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_on_bundled_five_sensor_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fit_5_sensors.toml");
    let out = run(&["fit", "--config", path(&cfg), "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est = estimate_from_str(&fs::read_to_string(dir.path().join("estimate.toml")).unwrap()).unwrap();
    assert_eq!(est.anchors.len(), 5);
    let residuals = fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    assert_eq!(residuals.lines().count(), 1 + 20);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("records=20") && stdout.contains("nmse="), "{stdout}");
}

#[test]
fn malformed_config_exits_2_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("fit_5_sensors.toml")).unwrap();
    let cases = [
        (text.replace("sensors = 5", "sensors = \"five\""), "key=scenario.sensors"),
        (text.replace("gamma = 3.0", "gama = 3.0"), "key=scenario.gama"),
        (text.replace("lambda = 1e-6", "lambda = -1.0"), "key=estimator.lambda"),
        (text.replace("psdmap/1", "psdmap/0"), "key=schema"),
        (text.replace("bits = 4", "bits = 0"), "key=scenario.quantizer.bits"),
    ];
    for (i, (body, key)) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{i}.toml"));
        fs::write(&cfg, body).unwrap();
        let out = run(&["fit", "--config", path(&cfg), "--out", path(dir.path())]);
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{stderr}");
        assert!(stderr.starts_with("psdmap-error code=2 kind=config"), "{stderr}");
        assert!(stderr.contains(key), "expected {key} in {stderr}");
    }
    assert!(!dir.path().join("estimate.toml").exists());
}

#[test]
fn missing_config_exits_4() {
    let out = run(&["fit", "--config", "/nonexistent/psdmap.toml"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=io"));
}

#[test]
fn rank_deficient_measurements_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tps2d.toml");
    let text = fs::read_to_string(configs().join("square_semiparametric.toml"))
        .unwrap()
        .replace("kind = \"semiparametric\"", "kind = \"tps\"");
    fs::write(&cfg, text).unwrap();
    let mut csv = String::from("sensor_index,x1,x2,phi1,phi2,phi3,phi4,q_index,y,eps,raw,is_virtual\n");
    for i in 0..4 {
        let t = 0.2 * i as f64;
        csv.push_str(&format!("{i},{t},{t},0.5,0.2,0.1,0.3,,1.0,0.1,,false\n"));
    }
    let meas = dir.path().join("m.csv");
    fs::write(&meas, csv).unwrap();
    let out = run(&["fit", "--config", path(&cfg), "--measurements", path(&meas), "--out", path(dir.path())]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(3), "{stderr}");
    assert!(stderr.contains("kind=solver"), "{stderr}");
}

#[test]
fn simulate_output_config_is_accepted_by_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let cfg = configs().join("fit_5_sensors.toml");
    let out = run(&["simulate", "--config", path(&cfg), "--seed", "9", "--out", path(&sim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (records, q) = measurements_from_csv(&fs::read_to_string(sim.join("measurements.csv")).unwrap()).unwrap();
    assert_eq!(records.len(), 20);
    assert_eq!(q.unwrap().cells(), 16);

    let fit_dir = dir.path().join("fit");
    let out = run(&["fit", "--config", path(&sim.join("config.toml")), "--out", path(&fit_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Fitting the simulated run directly gives the same estimate bytes.
    let direct = dir.path().join("direct");
    let out = run(&["fit", "--config", path(&cfg), "--seed", "9", "--out", path(&direct)]);
    assert!(out.status.success());
    assert_eq!(
        fs::read(fit_dir.join("estimate.toml")).unwrap(),
        fs::read(direct.join("estimate.toml")).unwrap()
    );
}

#[test]
fn evaluate_reads_fitted_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fit_5_sensors.toml");
    assert!(run(&["fit", "--config", path(&cfg), "--out", path(dir.path())]).status.success());
    let ev = dir.path().join("ev");
    let est = dir.path().join("estimate.toml");
    let out = run(&["evaluate", "--config", path(&cfg), "--estimate", path(&est), "--out", path(&ev)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let map = fs::read_to_string(ev.join("map.csv")).unwrap();
    assert_eq!(map.lines().next(), Some("x1,l1,l2,l3"));
    assert_eq!(map.lines().count(), 1 + 101);
    assert!(fs::read_to_string(ev.join("report.csv")).unwrap().starts_with("metric,value\nnmse,"));
}

#[test]
fn unknown_format_is_rejected() {
    let cfg = configs().join("fit_5_sensors.toml");
    let out = run(&["fit", "--config", path(&cfg), "--format", "json"]);
    assert_eq!(out.status.code(), Some(2));
}
