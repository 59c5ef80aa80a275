//! End-to-end runs of the binary.

use std::path::Path;
use std::process::{Command, Output};

use comp_noma::output::CSV_HEADER;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comp-noma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn preset_run_writes_csv_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fig4.csv");
    let out = run(&[
        "--preset",
        "fig4",
        "--trials",
        "10",
        "--workers",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 50..=400 m in 50 m steps, two schemes
    assert_eq!(rows.len(), 16);
    for row in &rows {
        assert_eq!(row.len(), 6);
        assert!(row[2].parse::<f64>().unwrap().is_finite());
        assert_eq!(row[5], "10");
    }

    let mut log = csv.into_os_string();
    log.push(".toml");
    let resolved = std::fs::read_to_string(Path::new(&log)).unwrap();
    assert!(resolved.contains("trials = 10"), "{resolved}");
}

#[test]
fn print_config_round_trips_through_config_flag() {
    let out = run(&["--preset", "fig6", "--print-config"]);
    assert_eq!(code(&out), 0);
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("fig6.toml");
    std::fs::write(&file, &out.stdout).unwrap();
    let again = run(&["--config", file.to_str().unwrap(), "--print-config"]);
    assert_eq!(
        code(&again),
        0,
        "{}",
        String::from_utf8_lossy(&again.stderr)
    );
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, "scenario_id = 1\ntrails = 5\n").unwrap();
    let out = run(&["--config", file.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("trails"));
}

#[test]
fn coordinated_beamforming_is_rejected() {
    let out = run(&["--scenario", "2", "--scheme", "CB-NOMA", "--trials", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn cs_outside_scenario_two_is_rejected() {
    let out = run(&["--scenario", "1", "--scheme", "CS-NOMA", "--trials", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let out = run(&[
        "--preset",
        "fig4",
        "--trials",
        "1",
        "--out",
        "/nonexistent-dir/out.csv",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_experiment_is_a_usage_error() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["--bogus"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}
