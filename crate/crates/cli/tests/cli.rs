use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[grid]
length = 1.0
n_cells = 64

[noise]
law = "power_law"
amplitude = 0.2
exponent = 3.0
k_max = 8

[model]
eps = 0.01
p = 3.0
theta = 0.2
alpha = -0.25

[stepper]
horizon = HORIZON
dt_init = 1e-5
dt_min = 1e-12
sigma = 1e-6

[initial_data]
kind = "cos_squared_bump"
amplitude = 1.0
center = 0.5
radius = 0.25

[ensemble]
n_samples = 4
base_seed = 3
phi_modes = [1]

[output]
records = 5
snapshots = true
"#;

fn write_config(dir: &Path, horizon: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, SMALL.replace("HORIZON", horizon)).unwrap();
    p
}

fn stfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stfe")).args(args).output().unwrap()
}

#[test]
fn zero_horizon_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "0.0");
    let out = dir.path().join("out");
    let o = stfe(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.0000000000000000e0,"));
    assert!(out.join("trajectory_meta.csv").exists());
    let snaps = fs::read(out.join("snapshots.bin")).unwrap();
    assert_eq!(snaps.len(), 21 + 65 * 8);
}

#[test]
fn verify_noise_passes_and_reports_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1e-4");
    let o = stfe(&["verify-noise", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 7);
    assert!(text.contains("correction operator"));
}

#[test]
fn ensemble_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "2e-4");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = stfe(&["ensemble", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out.join("ensemble.csv")).unwrap(), fs::read(out.join("martingale.csv")).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let header = String::from_utf8(a.0).unwrap();
    assert!(header.starts_with("eps,q,statistic,estimate,se,n_used,n_failed,valid\n"));
}

#[test]
fn contact_angle_reads_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1e-4");
    let out = dir.path().join("out");
    assert!(stfe(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let snaps = out.join("snapshots.bin");
    let o = stfe(&["contact-angle", snaps.to_str().unwrap()]);
    assert!(!o.status.success());
    let o = stfe(&["contact-angle", snaps.to_str().unwrap(), "--threshold", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("t,location,u_min,exponent,r_squared,n_points,status\n"));
    assert!(text.lines().count() > 1);
}

#[test]
fn dispersion_test_reports_small_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1e-4");
    let o = stfe(&["dispersion-test", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    let rel: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!(rel.abs() < 0.05, "{row}");
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, SMALL.replace("HORIZON", "1e-4").replace("theta = 0.2", "theta = 0.9")).unwrap();
    let o = stfe(&["simulate", p.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("error:") && err.contains("(H2ε)"), "{err}");
    let o = stfe(&["simulate", dir.path().join("missing.toml").to_str().unwrap()]);
    assert!(!o.status.success());
}
