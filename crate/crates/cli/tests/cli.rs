use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn dera(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dera"))
        .args(args)
        .env_remove("DERA_SEED")
        .output()
        .expect("binary runs")
}

fn short_scenario(dir: &Path, extra: &str) -> String {
    let p = dir.join("short.toml");
    std::fs::write(&p, format!("flags = \"case1\"\nduration = 1.0\nnoise_std = 1e-4\nseed = 4\n{extra}")).unwrap();
    p.display().to_string()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn simulate_writes_two_csvs_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = dera(&["simulate", "--scenario", &short_scenario(dir.path(), ""), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["measurements.csv", "truth.csv", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(read(&out.join("measurements.csv")).starts_with("t,V,freq,P,Q,Id,Iq"));
    assert_eq!(read(&out.join("truth.csv")).lines().count(), 32);
}

#[test]
fn missing_scenario_names_the_path() {
    let o = dera(&["simulate", "--scenario", "/no/such/scenario.toml", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/scenario.toml"));
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let s = short_scenario(dir.path(), "");
    assert!(dera(&["simulate", "--scenario", &s, "--out", a.to_str().unwrap(), "--seed", "11"]).status.success());
    let m = a.join("manifest.toml");
    let o = dera(&["replay", "--manifest", m.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&a.join("measurements.csv")), read(&b.join("measurements.csv")));
    assert_eq!(read(&a.join("truth.csv")), read(&b.join("truth.csv")));
}

#[test]
fn environment_override_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let s = short_scenario(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(dera(&["simulate", "--scenario", &s, "--out", a.to_str().unwrap(), "--seed", "5"]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_dera"))
        .args(["simulate", "--scenario", &s, "--out", b.to_str().unwrap()])
        .env("DERA_SEED", "5")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(read(&a.join("measurements.csv")), read(&b.join("measurements.csv")));
    assert!(read(&b.join("manifest.toml")).contains("seed = \"5\""));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dera(&["simulate"]).status.code(), Some(2));
    assert_eq!(
        dera(&["observe", "--scenario", "a", "--spec", "b", "--out", "c", "--measurement-set", "vxy"]).status.code(),
        Some(2)
    );
    assert_eq!(dera(&["calibrate", "--filter", "kf"]).status.code(), Some(2));
}

#[test]
fn observe_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    for (scenario, spec, want) in [
        ("case1.toml", "spec_case1_full.toml", "rank-deficient (rank < 23)"),
        ("case1.toml", "spec_case1_reduced.toml", "full rank (10)"),
        ("case2.toml", "spec_case2_reduced.toml", "full rank (14)"),
    ] {
        let out = dir.path().join(spec);
        let o = dera(&["observe", "--scenario", &cfg(scenario), "--spec", &cfg(spec), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = read(&out.join("observability.txt"));
        assert!(text.contains(&format!("verdict = \"{want}\"")), "{spec}");
        assert!(text.contains("[singular_values]") && text.contains("[weakest_direction]") && text.contains("[selection]"));
    }
}

#[test]
fn calibrate_rejects_spec_scenario_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let s = short_scenario(dir.path(), "");
    assert!(dera(&["simulate", "--scenario", &s, "--out", data.to_str().unwrap()]).status.success());
    let o = dera(&[
        "calibrate",
        "--measurements",
        data.join("measurements.csv").to_str().unwrap(),
        "--scenario",
        &s,
        "--spec",
        &cfg("spec_case2_calibration.toml"),
        "--out",
        dir.path().join("cal").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("contract"));
}

#[test]
fn calibrate_both_filters_writes_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let s = short_scenario(dir.path(), "");
    assert!(dera(&["simulate", "--scenario", &s, "--out", data.to_str().unwrap()]).status.success());
    let cal = dir.path().join("cal");
    let o = dera(&[
        "calibrate",
        "--measurements",
        data.join("measurements.csv").to_str().unwrap(),
        "--scenario",
        &s,
        "--spec",
        &cfg("spec_case1_reduced.toml"),
        "--filter",
        "both",
        "--passes",
        "2",
        "--out",
        cal.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&cal.join("ekf_summary.csv"));
    assert!(summary.starts_with("parameter,initialization,estimate,cov"));
    assert_eq!(summary.lines().count(), 6);
    assert_eq!(read(&cal.join("agreement.csv")).lines().count(), 6);
    assert!(cal.join("ukf_parameters.toml").exists());
}

#[test]
fn compare_with_identical_parameters_gives_equal_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let s = short_scenario(dir.path(), "");
    assert!(dera(&["simulate", "--scenario", &s, "--out", data.to_str().unwrap()]).status.success());
    let params = dir.path().join("p.toml");
    std::fs::write(&params, "t_rv = 0.02\n").unwrap();
    let out = dir.path().join("cmp");
    let o = dera(&[
        "compare",
        "--measurements",
        data.join("measurements.csv").to_str().unwrap(),
        "--scenario",
        &s,
        "--calibrated",
        params.to_str().unwrap(),
        "--guideline",
        params.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rmse = read(&out.join("rmse.csv"));
    let rows: Vec<&str> = rmse.lines().skip(1).map(|l| l.split_once(',').unwrap().1).collect();
    assert_eq!(rows[0], rows[1]);
    assert_eq!(read(&out.join("comparison.csv")).lines().count(), 32);
}

#[test]
fn compare_without_measurements_fails() {
    let dir = tempfile::tempdir().unwrap();
    let s = short_scenario(dir.path(), "");
    let o = dera(&[
        "compare",
        "--measurements",
        "/no/such/truth.csv",
        "--scenario",
        &s,
        "--calibrated",
        &cfg("nerc_guideline.toml"),
        "--guideline",
        &cfg("nerc_guideline.toml"),
        "--out",
        dir.path().join("cmp").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
