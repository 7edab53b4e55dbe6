use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trapsim"));
    c.env_remove("TRAPSIM_WORKERS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("# config_sha256="));
    let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    serde_json::from_str(&body).unwrap()
}

#[test]
fn field_map_with_all_voltages_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[electrodes]\ne_perimeter = 0.0\n[fields]\nmin = [0.01, 0.005, 0.001]\nmax = [0.02, 0.015, 0.002]\ncounts = [2, 2, 2]\n",
    );
    let out = run(&["fields", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&dir.path().join("field_map.csv"));
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r[4..].iter().all(|v| *v == 0.0)));
}

#[test]
fn field_map_minimum_sits_at_the_cancellation_height() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fields_zero.toml");
    let out = run(&["fields", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&dir.path().join("field_map.csv"));
    let min = rows.iter().min_by(|a, b| a[7].total_cmp(&b[7])).unwrap();
    let z0 = 400e-6 / std::f64::consts::PI * 10f64.ln();
    let cell = 0.0004 / 40.0;
    assert!((min[2] - z0).abs() <= 2.0 * cell, "min at z = {}", min[2]);
}

#[test]
fn zeros_command_lists_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fields_zero.toml");
    let out = run(&["zeros", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&dir.path().join("zeros.csv"));
    // 20 mm of plate with one zero per 800 um.
    assert!((24..=26).contains(&rows.len()), "{} zeros", rows.len());
}

#[test]
fn malformed_config_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[loss]\nbackground_rte = 1.0\n");
    let out = run(&["storage", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("background_rte"));

    let cfg = write(dir.path(), "d.toml", "[geometry\n");
    assert_eq!(run(&["fields", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[electrodes]\ne_perimeter = 7e6\n");
    assert_eq!(run(&["fields", "--config", &cfg, "--out", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "");
    let out = run(&["fields", "--out", &blocker]);
    assert_eq!(out.status.code(), Some(4));
}

const STORAGE: &str = "[electrodes]\nv_micro = 400.0\ne_offset_region1 = 3e5\ne_offset_region2 = 3e5\n\
[source]\nn_molecules = 300\n[loss]\ne_critical = 0.0\nbackground_rate = BG\n\
[sweep]\nt_hold = [1.0, 60.0]\n[detection]\nbin_width = 1e-3\n[integration]\nboundary = \"hard_wall\"\n";

#[test]
fn storage_two_holds_writes_two_tofs_and_a_lifetime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &STORAGE.replace("BG", "0.082"));
    let out = run(&["storage", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("tof_hold_000.csv").exists());
    assert!(dir.path().join("tof_hold_001.csv").exists());
    assert!(!dir.path().join("tof_hold_002.csv").exists());
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["lifetime_method"], "two_point");
    let tau = r["lifetime"]["tau"].as_f64().unwrap();
    assert!(tau > 5.0 && tau < 30.0, "tau {tau}");
    assert_eq!(r["lifetime_unbounded"], false);
    for run in r["runs"].as_array().unwrap() {
        let c = &run["counts"];
        let total: u64 = ["alive", "lost_majorana", "lost_leak", "lost_background", "lost_barrier", "detected"]
            .iter()
            .map(|k| c[k].as_u64().unwrap())
            .sum();
        assert_eq!(total, 300);
    }
}

#[test]
fn lossless_storage_reports_capped_lifetime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &STORAGE.replace("BG", "0.0"));
    let out = run(&["storage", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["lifetime_unbounded"], true);
}

#[test]
fn outputs_are_byte_identical_across_repeats_and_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write(a.path(), "c.toml", &STORAGE.replace("BG", "0.082"));
    let r1 = run(&["storage", "--config", &cfg, "--out", a.path().to_str().unwrap(), "--workers", "1"]);
    let r2 = bin()
        .args(["storage", "--config", &cfg, "--out", b.path().to_str().unwrap()])
        .env("TRAPSIM_WORKERS", "3")
        .output()
        .unwrap();
    assert!(r1.status.success() && r2.status.success());
    for f in ["tof_hold_000.csv", "tof_hold_001.csv", "report.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn adiabatic_prints_the_ideal_cooling_factor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[electrodes]\nv_micro = 400.0\ne_offset_region1 = 3e5\ne_offset_region2 = 3e5\n\
         [source]\nn_molecules = 200\n[loss]\ne_critical = 0.0\n[protocol]\nt_total = 0.05\nt_unload = 0.1\n\
         [sweep]\nt_ramp = [0.001, 0.05]\n[detection]\nbin_width = 2e-4\n\
         [integration]\nboundary = \"hard_wall\"\ndt = 5e-6\n",
    );
    let out = run(&["adiabatic", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("F_opt(d=3) = 1.5874"));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["reference_t_ramp"].as_f64(), Some(0.001));
    assert_eq!(r["cooling"][0]["cooling"]["cooling_factor"].as_f64(), Some(1.0));
    assert!(dir.path().join("tof_ramp_001.csv").exists());
}

#[test]
fn adiabatic_rejects_ramp_longer_than_the_total() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[protocol]\nt_total = 0.1\n[sweep]\nt_ramp = [0.2]\n");
    assert_eq!(run(&["adiabatic", "--config", &cfg, "--out", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

fn tof_file(dir: &Path, name: &str, v0: f64) -> String {
    // Single arrival bin whose right edge is L/v0.
    let l = 0.3;
    let bw = 1e-3;
    let centre = l / v0 - bw / 2.0;
    write(dir, name, &format!("# t0=0 bin_width={bw} L={l} normalization=raw\nt_s,count\n{centre},25\n"))
}

#[test]
fn analyze_tof_delta_peak_and_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let f = tof_file(dir.path(), "a.csv", 6.0);
    let out = run(&["analyze-tof", &f, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("tof_analysis.json"));
    assert!((r["mean_velocity"].as_f64().unwrap() - 6.0).abs() < 1e-9);

    let f = tof_file(dir.path(), "b.csv", 5.44);
    let out = run(&["analyze-tof", &f, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let r = json(&dir.path().join("tof_analysis.json"));
    assert!((r["temperature"].as_f64().unwrap() - 0.121).abs() < 1e-3);
}

#[test]
fn analyze_tof_empty_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "e.csv", "# t0=0 bin_width=0.001 L=0.3\nt_s,count\n0.0005,0\n");
    assert_eq!(run(&["analyze-tof", &f, "--out", dir.path().to_str().unwrap()]).status.code(), Some(3));
    let g = write(dir.path(), "g.csv", "");
    assert_eq!(run(&["analyze-tof", &g, "--out", dir.path().to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(run(&["analyze-tof", "/nonexistent/x.csv"]).status.code(), Some(4));
}

#[test]
fn fit_lifetime_recovers_tau() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (1..=60).map(|t| format!("{t},{}\n", 100.0 * (-(t as f64) / 12.2).exp())).collect();
    let f = write(dir.path(), "s.csv", &format!("t_hold,signal\n{rows}"));
    let out = run(&["fit-lifetime", &f, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("lifetime_fit.json"));
    assert!((r["fit"]["tau"].as_f64().unwrap() / 12.2 - 1.0).abs() < 1e-6);

    let bad = write(dir.path(), "n.csv", "0,1\n1,-1\n2,0.5\n");
    assert_eq!(run(&["fit-lifetime", &bad, "--out", dir.path().to_str().unwrap()]).status.code(), Some(3));
}
