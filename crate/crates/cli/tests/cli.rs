use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nowcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nowcast")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nowcast(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small weekly fixture written by the binary itself.
fn fixture(root: &Path) -> PathBuf {
    let data = root.join("data");
    ok(&["fixture", "--t", "60", "--n-gt", "8", "--n-noise", "2", "--seed", "5", "--out", p(&data)]);
    data
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn baseline_estimate_writes_nine_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let run = dir.path().join("est");
    ok(&["estimate", "--data", p(&data), "--out", p(&run)]);
    let rows = csv_rows(&run.join("params.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        names,
        ["sigma_R_y", "sigma_omega_y", "sigma_lambda", "sigma_nu1", "sigma_nu2", "sigma_nu3", "sigma_nu4", "sigma_nu5", "delta"]
    );
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    for key in ["config_sha256", "seed", "version", "input_sha256.lfs.csv", "reproduce"] {
        assert!(manifest.contains(key), "manifest lacks {key}");
    }
}

#[test]
fn manifests_reproduce_runs_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let first = dir.path().join("a");
    ok(&["estimate", "--data", p(&data), "--model", "cc", "--out", p(&first)]);
    let second = dir.path().join("b");
    ok(&["estimate", "--config", p(&first.join("config.txt")), "--out", p(&second)]);
    for f in ["params.csv", "fit.csv", "accuracy.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let cfg = dir.path().join("settings.txt");
    fs::write(&cfg, format!("# factors settings\ndata = {}\nr = 3\nr_max = 5\n", data.display())).unwrap();
    let run = dir.path().join("f");
    ok(&["factors", "--config", p(&cfg), "--r", "1", "--out", p(&run)]);
    let eff = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(eff.contains("r = 1\n"), "{eff}");
    assert!(eff.contains("r_max = 5\n"));
    assert!(eff.contains("gt_frequency = monthly\n"));
    let header = fs::read_to_string(run.join("factors.csv")).unwrap();
    assert!(header.starts_with("series,loading_1,idio_var"));

    fs::write(&cfg, "r = 1\nr = 2\n").unwrap();
    let out = nowcast(&["factors", "--config", p(&cfg), "--out", p(&run)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate key"));

    let out = nowcast(&["estimate", "--config", p(&run.join("config.txt")), "--out", p(&run)]);
    assert!(!out.status.success());
}

#[test]
fn weekly_nowcasts_report_every_week() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let run = dir.path().join("nc");
    let stdout = ok(&[
        "nowcast", "--data", p(&data), "--model", "gt,baseline", "--gt-frequency", "weekly", "--weeks", "--h", "1", "--min-selected", "3",
        "--out", p(&run),
    ]);
    assert!(stdout.contains("week 1"));
    let acc = csv_rows(&run.join("accuracy.csv"));
    let scopes: Vec<&str> = acc.iter().filter(|r| r[0] == "gt").map(|r| r[1].as_str()).collect();
    assert_eq!(scopes[0], "all");
    assert!(scopes[1..].iter().enumerate().all(|(j, s)| *s == format!("week {}", j + 1)));
    assert!((4..=5).contains(&(scopes.len() - 1)));
    for r in &acc {
        for v in &r[2..] {
            let x: f64 = v.parse().unwrap();
            assert!(x.is_finite() && x > 0.0);
        }
    }
    let points = csv_rows(&run.join("nowcast.csv"));
    assert_eq!(points.iter().filter(|r| r[0] == "gt").count(), scopes.len() - 1);
}

#[test]
fn simulate_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("mc");
    ok(&["simulate", "--regime", "homoskedastic-dense", "--rho", "0,0.9", "--nsim", "3", "--t", "60", "--n", "20", "--seed", "7", "--out", p(&run)]);
    let rows = csv_rows(&run.join("mc_table.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "homoskedastic-dense");
    assert_eq!(rows[1][1], "0.9");

    let bad = nowcast(&["simulate", "--regime", "nope", "--out", p(&run)]);
    assert!(!bad.status.success());
}

#[test]
fn invalid_data_is_reported_with_its_location() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let text = fs::read_to_string(data.join("lfs.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[4].split(',').map(str::to_string).collect();
    cells[7] = "-1".into();
    lines[4] = cells.join(",");
    fs::write(data.join("lfs.csv"), lines.join("\n") + "\n").unwrap();
    let out = nowcast(&["estimate", "--data", p(&data), "--out", p(&dir.path().join("x"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 5") && err.contains("se2"), "{err}");
}

#[test]
fn screening_and_diagnostics_produce_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let run = dir.path().join("s");
    ok(&["screen", "--data", p(&data), "--n-boot", "49", "--out", p(&run)]);
    assert_eq!(csv_rows(&run.join("unitroot.csv")).len(), 8);
    ok(&["diagnose", "--data", p(&data), "--model", "cc", "--out", p(&run)]);
    assert_eq!(csv_rows(&run.join("normality.csv")).len(), 6);
    ok(&["lrtest", "--data", p(&data), "--model", "cc", "--hypothesis", "rho_cc", "--out", p(&run)]);
    let lr = csv_rows(&run.join("lrtest.csv"));
    assert_eq!(lr[0][1], "rho_cc=0");
    ok(&["target", "--data", p(&data), "--out", p(&run)]);
    assert_eq!(csv_rows(&run.join("targeting.csv")).len(), 8);
}
