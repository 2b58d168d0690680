use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tdubench::config::ToolkitConfig;
use tdubench::orchestrator::{BodeRow, NoiseRow, TelemetryRow};
use tdubench::output::{read_csv, verify_manifest, write_csv, CsvRecord, Manifest, OutputError};

fn tdubench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdubench"))
        .args(args)
        .env_remove("TDUBENCH_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn same_seed_gives_byte_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tdubench(&[
            "velocity-sweep",
            "--backend",
            "sim",
            "--seed",
            "7",
            "--out",
            path(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["velocity_sweep/telemetry.csv", "velocity_sweep/bode.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(!x.is_empty());
        assert!(x == y, "{file} differs");
    }
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tdubench"))
        .args(["static-torque", "--out", path(dir.path())])
        .env("TDUBENCH_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m.seed, 42);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("static_torque/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["provenance"]["seed"], 42);
}

#[test]
fn dump_config_loads_back_unchanged() {
    let o = tdubench(&["dump-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(
        ToolkitConfig::from_toml_str(&text).unwrap(),
        ToolkitConfig::default()
    );
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    std::fs::write(&file, &text).unwrap();
    let again = tdubench(&["dump-config", "--config", path(&file)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(tdubench(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        tdubench(&["noise", "--volume", "11"]).status.code(),
        Some(2)
    );

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[thermal]\nhold_torque = \"lots\"\n").unwrap();
    assert_eq!(
        tdubench(&["noise", "--config", path(&bad)]).status.code(),
        Some(3)
    );
    let missing = dir.path().join("missing.toml");
    assert_eq!(
        tdubench(&["noise", "--config", path(&missing)])
            .status
            .code(),
        Some(3)
    );

    let o = tdubench(&["static-torque", "--backend", "can0", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("E_BACKEND"));

    let mut cfg = ToolkitConfig::default();
    cfg.noise.conditions.remove(0);
    let no_floor = dir.path().join("no_floor.toml");
    std::fs::write(&no_floor, cfg.to_toml_string()).unwrap();
    let o = tdubench(&["noise", "--config", path(&no_floor), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("E_MISSING_FLOOR"));
}

fn rewrite_is_identical<R: CsvRecord>(file: &Path) -> usize {
    let rows: Vec<R> = read_csv(file).unwrap();
    let copy = file.with_extension("copy.csv");
    write_csv(&copy, &rows).unwrap();
    assert!(
        std::fs::read(file).unwrap() == std::fs::read(&copy).unwrap(),
        "{}",
        file.display()
    );
    rows.len()
}

#[test]
fn all_writes_five_reports_that_verify_and_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let start = Instant::now();
    let o = tdubench(&[
        "all",
        "--backend",
        "sim",
        "--seed",
        "3",
        "--accelerate",
        "--out",
        path(out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(300));

    let cfg = ToolkitConfig::default();
    let manifest = verify_manifest(out, &cfg).unwrap();
    assert!(manifest.accelerate);
    assert_eq!(
        manifest
            .outputs
            .iter()
            .filter(|f| f.ends_with("report.json"))
            .count(),
        5
    );

    for p in [
        "static_torque",
        "velocity_sweep",
        "thermal",
        "noise",
        "battery",
    ] {
        let telemetry = out.join(p).join("telemetry.csv");
        assert!(rewrite_is_identical::<TelemetryRow>(&telemetry) > 0);
    }
    assert_eq!(
        rewrite_is_identical::<BodeRow>(&out.join("velocity_sweep/bode.csv")),
        120
    );
    assert_eq!(
        rewrite_is_identical::<NoiseRow>(&out.join("noise/noise.csv")),
        20
    );

    // the in-memory rows survive the round trip exactly
    let bode: Vec<BodeRow> = read_csv(&out.join("velocity_sweep/bode.csv")).unwrap();
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("velocity_sweep/report.json")).unwrap(),
    )
    .unwrap();
    let points: Vec<BodeRow> = serde_json::from_value(report["metrics"]["points"].clone()).unwrap();
    for (a, b) in bode.iter().zip(&points) {
        assert_eq!(a.fields(), b.fields());
    }

    let mut other = cfg.clone();
    other.noise.window_s = 10.0;
    assert!(matches!(
        verify_manifest(out, &other),
        Err(OutputError::Mismatch(_))
    ));

    let report_path = out.join("thermal/report.json");
    let text = std::fs::read_to_string(&report_path).unwrap();
    std::fs::write(&report_path, text.replace(&cfg.hash(), &other.hash())).unwrap();
    assert!(matches!(
        verify_manifest(out, &cfg),
        Err(OutputError::Mismatch(_))
    ));
}

#[test]
fn calibrate_prints_a_loadable_config_and_writes_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let o = tdubench(&[
        "calibrate",
        "--group",
        "thermal",
        "--group",
        "acoustic",
        "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fitted = ToolkitConfig::from_toml_str(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert!(stderr(&o).contains("thermal rise, fans off"));
    let written = std::fs::read_to_string(dir.path().join("calibration/config.toml")).unwrap();
    assert_eq!(ToolkitConfig::from_toml_str(&written).unwrap(), fitted);
    let residuals: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("calibration/residuals.json")).unwrap(),
    )
    .unwrap();
    let groups = residuals.as_array().unwrap();
    assert_eq!(groups.len(), 2);
    for g in groups {
        for r in g["residuals"].as_array().unwrap() {
            assert!(r["relative"].as_f64().unwrap().abs() <= 0.2, "{r}");
        }
    }
}
