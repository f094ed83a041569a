use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use h2t2::datagen::load_csv;

fn h2t2(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_h2t2"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn mean_row(summary: &str, policy: &str) -> Vec<String> {
    summary
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .find(|cols| cols[1] == policy && cols[2] == "mean")
        .unwrap_or_else(|| panic!("no mean row for {policy}"))
}

#[test]
fn full_offload_costs_beta() {
    let dir = tempfile::tempdir().unwrap();
    let out = h2t2(
        &[
            "run",
            "--policies",
            "full-offload",
            "--beta",
            "0.3",
            "--horizon",
            "100",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let row = mean_row(&summary, "full-offload");
    assert_eq!(row[4].parse::<f64>().unwrap(), 0.3);
    assert!(dir.path().join("traces/full-offload_seed0.csv").exists());
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let out = h2t2(
        &[
            "run",
            "--horizon",
            "200",
            "--seeds",
            "2",
            "--seed",
            "5",
            "--eta",
            "tuned",
        ],
        a.path(),
    );
    assert!(out.status.success());
    let b = tempfile::tempdir().unwrap();
    let cfg = a.path().join("config.toml");
    let out = h2t2(&["run", "--config", cfg.to_str().unwrap()], b.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read(a.path().join("summary.csv")).unwrap(),
        fs::read(b.path().join("summary.csv")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_scores.csv");
    let out = h2t2(
        &["run", "--data-csv", missing.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_scores.csv"));
}

#[test]
fn empty_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "f,rdl_label\n").unwrap();
    let out = h2t2(
        &["offline-opt", "--data-csv", csv.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nflavour = \"mint\"\n").unwrap();
    let out = h2t2(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = h2t2(&["run", "--pseudo-loss", "optimistic"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = h2t2(&["sweep-asymmetry", "--delta-fn", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_bits_reports_expert_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = h2t2::cli::config::ExperimentConfig::preset();
    cfg.sweep.bits = vec![2, 3, 4, 5];
    cfg.horizon = 200;
    let path = dir.path().join("cfg.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let out = h2t2(
        &["sweep-bits", "--config", path.to_str().unwrap()],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(dir.path().join("sweep_bits.csv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "experts").unwrap();
    let mut counts: Vec<(String, String)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0].to_string(), cols[col].to_string())
        })
        .collect();
    counts.dedup();
    let expected: Vec<(String, String)> = [("2", "10"), ("3", "36"), ("4", "136"), ("5", "528")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    assert_eq!(counts, expected);
    assert!(dir.path().join("timing.csv").exists());
}

#[test]
fn sweep_eta_includes_both_anchors() {
    let dir = tempfile::tempdir().unwrap();
    let out = h2t2(
        &["sweep-eta", "--horizon", "200", "--policies", "h2t2"],
        dir.path(),
    );
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("sweep_eta.csv")).unwrap();
    assert!(table.lines().any(|l| l.ends_with(",tuned")));
    assert!(table
        .lines()
        .any(|l| l.starts_with("1,") && l.ends_with(",unit")));
}

#[test]
fn gen_data_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    let out = h2t2(&["gen-data", "--horizon", "500", "--seed", "3"], dir.path());
    assert!(out.status.success());
    let path = dir.path().join("data_seed3.csv");
    let data = load_csv(&path, 4).unwrap();
    assert_eq!(data.len(), 500);
    let mut again = Vec::new();
    h2t2::datagen::write_csv(&data, &mut again).unwrap();
    assert_eq!(again, fs::read(&path).unwrap());
}

#[test]
fn offline_opt_on_free_offloading_reaches_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = h2t2(
        &["offline-opt", "--beta", "0", "--horizon", "300"],
        dir.path(),
    );
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("offline.csv")).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[6], "0");
}
