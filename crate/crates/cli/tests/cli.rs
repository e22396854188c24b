//! End-to-end checks of the `eponsim` binary.

use std::path::Path;
use std::process::Command;

fn eponsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eponsim"))
}

fn write_tiny_scenario(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("out");
    let scenario = format!(
        r#"
seed = 7
duration_ns = 100000000
output_dir = "{}"

[pon]
n_onus = 4
n_wavelengths = 2
line_rate_bps = 25000000000
guard_ns = 1000
rtt_min_ns = 100000
rtt_max_ns = 200000
default_w_max_bytes = 30000

[agent]
enabled = true
managed_onu = 2

[agent.params]
target_latency_ns = 1000000
interval_ns = 25000000
alpha = 0.1
gamma = 0.9
epsilon = 0.3
epsilon_decay = 0.99
epsilon_min = 0.02
action_set_bytes = [5000, 8000, 12800, 20500, 32800, 52400, 83900, 160000]
n_state_bins = 11

[load]
kind = "fixed"
load = 0.3
"#,
        out.display()
    );
    let path = dir.join("scenario.toml");
    std::fs::write(&path, scenario).unwrap();
    path
}

#[test]
fn guard_budget_reports_safe_total() {
    let output = eponsim()
        .args(["guard-budget", "--margin", "0"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("= 125 ns"), "{stdout}");
    assert!(stdout.contains("SAFE"), "{stdout}");
}

#[test]
fn guard_budget_unsafe_when_margin_overflows() {
    let output = eponsim()
        .args(["guard-budget", "--margin", "900"])
        .output()
        .unwrap();
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("1025 ns"), "{stdout}");
    assert!(stdout.contains("UNSAFE"), "{stdout}");
}

#[test]
fn validate_accepts_good_and_rejects_bad() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_scenario(dir.path());
    let ok = eponsim().arg("validate").arg(&path).output().unwrap();
    assert!(ok.status.success());

    let bad_path = dir.path().join("bad.toml");
    let bad = std::fs::read_to_string(&path)
        .unwrap()
        .replace("duration_ns = 100000000", "duration_ns = 0");
    std::fs::write(&bad_path, bad).unwrap();
    let rejected = eponsim().arg("validate").arg(&bad_path).output().unwrap();
    assert_eq!(rejected.status.code(), Some(2));
    let stderr = String::from_utf8(rejected.stderr).unwrap();
    assert!(stderr.contains("duration"), "{stderr}");
}

#[test]
fn run_then_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_scenario(dir.path());
    let run = eponsim().arg("run").arg(&path).output().unwrap();
    let stdout = String::from_utf8(run.stdout.clone()).unwrap();
    assert!(run.status.success(), "{stdout}");
    assert!(stdout.contains("mean latency"), "{stdout}");

    let out = dir.path().join("out");
    for file in [
        "latency_timeseries.csv",
        "agent_log.csv",
        "qtable.csv",
        "summary.csv",
        "config.toml",
    ] {
        assert!(out.join(file).exists(), "{file} missing");
    }

    let compare = eponsim()
        .arg("compare")
        .arg(&out)
        .arg(&out)
        .output()
        .unwrap();
    assert!(compare.status.success());
    let table = String::from_utf8(compare.stdout).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
}

#[test]
fn run_with_overrides_and_agent_off() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_scenario(dir.path());
    let out2 = dir.path().join("out2");
    let run = eponsim()
        .arg("run")
        .arg(&path)
        .args(["--seed", "9", "--duration", "50ms", "--agent", "off"])
        .arg("--output-dir")
        .arg(&out2)
        .output()
        .unwrap();
    assert!(run.status.success());
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("agent off"), "{stdout}");
    // Agent-off runs still write the (header-only) agent artifacts.
    let agent_log = std::fs::read_to_string(out2.join("agent_log.csv")).unwrap();
    assert_eq!(agent_log.lines().count(), 1);
}

#[test]
fn output_root_env_prefixes_relative_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_tiny_scenario(dir.path());
    // Rewrite the scenario to a relative output dir and point the root
    // env var at a temp location.
    let rel = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| {
            if l.starts_with("output_dir") {
                "output_dir = \"nested/out\"".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&path, rel).unwrap();
    let root = dir.path().join("root");
    let run = eponsim()
        .arg("run")
        .arg(&path)
        .args(["--duration", "20ms"])
        .env("EPONSIM_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(run.status.success());
    assert!(root.join("nested/out/summary.csv").exists());
}

#[test]
fn unknown_preset_is_a_validation_error() {
    let output = eponsim()
        .args(["run", "--preset", "warp-speed"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("desk"), "{stderr}");
}
