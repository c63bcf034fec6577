use std::fs;
use std::process::Command;

fn afcsim() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_afcsim"));
    for var in ["AFCSIM_SCENARIO", "AFCSIM_OUT", "AFCSIM_TOL", "AFCSIM_NO_DECIMATION", "AFCSIM_THREADS"] {
        cmd.env_remove(var);
    }
    cmd
}

#[test]
fn echo_writes_hashed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = afcsim()
        .args(["echo", "--scenario", "pr_fig2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("eta_echo = 0.2"));
    let csv = fs::read_to_string(dir.path().join("echo_envelope.csv")).unwrap();
    assert!(csv.starts_with("# afcsim config_sha256="));
    assert!(dir.path().join("effective_config.toml").exists());
}

#[test]
fn identical_config_gives_identical_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let st = afcsim().args(["dump-comb", "--scenario", "pr_fig2", "--out"]).arg(d.path()).status().unwrap();
        assert!(st.success());
    }
    let x = fs::read(a.path().join("comb.csv")).unwrap();
    let y = fs::read(b.path().join("comb.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn env_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let st = afcsim()
        .arg("capacity")
        .env("AFCSIM_SCENARIO", "eu_sectionV")
        .env("AFCSIM_OUT", dir.path())
        .env("AFCSIM_THREADS", "2")
        .status()
        .unwrap();
    assert!(st.success());
    let csv = fs::read_to_string(dir.path().join("capacity.csv")).unwrap();
    assert!(csv.lines().last().unwrap().ends_with("pi_limit"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[comb]\npeak_width_hz = 25e3\nwidth = 3\n").unwrap();
    let out = afcsim().arg("echo").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3") && err.contains("comb.width"), "{err}");

    let out = afcsim().args(["echo", "--scenario", "no_such_scenario.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn model_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.toml");
    // Mode far too short for the comb bandwidth.
    fs::write(
        &path,
        "[comb]\npeak_width_hz = 25e3\npeak_spacing_hz = 100e3\npeak_count = 40\ndepth_per_peak = 4.0\n\n[signal]\nmode_duration_s = 1e-7\n",
    )
    .unwrap();
    let out = afcsim().arg("echo").arg("--scenario").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn store_needs_control() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bare.toml");
    fs::write(&path, "[comb]\npeak_width_hz = 25e3\npeak_spacing_hz = 100e3\npeak_count = 40\ndepth_per_peak = 4.0\n")
        .unwrap();
    let out = afcsim().arg("store").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
