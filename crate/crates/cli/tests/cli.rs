use std::path::Path;
use std::process::{Command, Output};

fn kkdetect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kkdetect"))
        .args(args)
        .output()
        .unwrap()
}

fn run_config(dir: &Path, text: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.join("out");
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    kkdetect(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const KK_WEAK_LO: &str = r#"{
  "version": 1, "experiment": "kk", "seed": 3,
  "grid": {"dt": 1.0, "n": 1024},
  "signal": {"alpha": [2.0, 1.0], "mode": {"kind": "ssb_gaussian", "center_freq": 0.4, "spectral_width": 0.07}},
  "lo": {"amplitude": 1.0}, "reflection": 0.5, "shots": 100
}"#;

#[test]
fn malformed_json_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(dir.path(), "{\"version\": 1, \"experiment\": ", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validation_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        r#"{"version": 7, "experiment": "hilbert", "n": 64, "sentinel_cycles": 2}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version"));

    let text = r#"{"version": 1, "experiment": "hilbert", "seed": 1, "n": 64, "sentinel_cycles": 40}"#;
    let o = run_config(dir.path(), text, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sentinel_cycles"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stochastic_runs_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"version": 1, "experiment": "hilbert", "n": 64, "sentinel_cycles": 2}"#;
    let o = run_config(dir.path(), text, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));

    let o = run_config(dir.path(), text, &["--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = String::from_utf8(o.stdout).unwrap();
    assert_eq!(line.lines().count(), 1);
    let summary: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(summary["seed"], 5);
    assert!(dir.path().join("out/summary.json").exists());
}

#[test]
fn min_phase_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(dir.path(), KK_WEAK_LO, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("phase"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn describe_known_and_unknown() {
    let o = kkdetect(&["describe", "kk"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("q + i p"));

    let o = kkdetect(&["describe", "tomography"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("window"));

    assert_eq!(kkdetect(&["describe", "bogus"]).status.code(), Some(2));
}

#[test]
fn version_flag() {
    let o = kkdetect(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn summary_file_is_independent_of_the_output_dir() {
    let text = r#"{"version": 1, "experiment": "interference", "seed": 9, "cases": 5,
        "max_lo_amplitude": 1.0, "reflection": 0.4,
        "phase_eigenstate": {"z_abs": 0.2, "z_arg": 0.1, "lo_amplitude": 1.0, "lo_phase": 0.5, "n_max": 30}}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_config(a.path(), text, &["--threads", "1"]).status.success());
    assert!(run_config(b.path(), text, &[]).status.success());
    for name in ["summary.json", "cases.json"] {
        let x = std::fs::read(a.path().join("out").join(name)).unwrap();
        let y = std::fs::read(b.path().join("out").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}
