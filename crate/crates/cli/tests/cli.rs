use std::fs;
use std::process::{Command, Output};

fn afcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afcsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 6] = [
    "--override",
    "detection.lots=4",
    "--override",
    "detection.pulses_per_lot=2000",
    "--override",
    "detection.pulses_total=8000",
];

#[test]
fn unknown_key_is_rejected_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, "[pump]\npower_ww = 0.1\n").unwrap();
    let out = afcsim(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("power_ww") && err.contains("pump"), "{err}");
}

#[test]
fn invalid_value_names_the_field() {
    let out = afcsim(&[
        "fig2",
        "--override",
        "detection.detector_efficiency=1.5",
        "--out",
        "/nonexistent/x",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detector_efficiency"));
}

#[test]
fn missing_file_fails() {
    let out = afcsim(&["run", "/nonexistent/scenario.toml"]);
    assert!(!out.status.success());
}

#[test]
fn fig2_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let mut args = vec!["fig2", "--seed", "11", "--out", out_dir.to_str().unwrap()];
        args.extend(SMALL);
        let out = afcsim(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("fig2.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert!(a.starts_with("pump_w,eta_dev,noise_per_pulse,noise_sigma,snr,snr_sigma\n"));
    assert!(a.contains("# scenario_hash=") && a.ends_with("# seed=11\n"));
    assert_eq!(a.lines().count(), 1 + 11 + 2);
}

#[test]
fn run_dispatches_on_the_experiment_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, "experiment = \"fig2\"\n[pump]\nsweep_w = [0.1, 0.2]\n").unwrap();
    let mut args = vec!["run", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    args.extend(SMALL);
    let out = afcsim(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("fig2.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn calibrate_writes_both_scalars() {
    let dir = tempfile::tempdir().unwrap();
    let out = afcsim(&["calibrate", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = fs::read_to_string(dir.path().join("calibration.csv")).unwrap();
    let row: Vec<f64> = t
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(row[0] > 0.0 && row[1] > 0.0 && (row[3] - 0.198).abs() < 1e-3, "{t}");
}

#[test]
fn dump_profile_writes_profiles_and_pulses() {
    let dir = tempfile::tempdir().unwrap();
    let out = afcsim(&[
        "dump-profile",
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "calibration.calibrate_d_peak=false",
        "--override",
        "memory.comb.peak_depth=2.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["profile_pit.dat", "profile_comb.dat", "pulse_in.dat", "pulse_out.dat"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with('#') && text.lines().count() > 65536, "{f}");
    }
}
