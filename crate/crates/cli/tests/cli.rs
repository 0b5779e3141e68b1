//! End-to-end checks of the `syncdmpc` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use syncdmpc::config::ExperimentConfig;

fn syncdmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_syncdmpc"))
        .args(args)
        .env_remove("SYNCDMPC_TRACE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_passes_on_the_bundled_fixture() {
    let o = syncdmpc(&["verify", "--fixture", "sec5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.matches("admissible_eta").count(), 3);
    assert!(text.contains("all gates passed"));
}

#[test]
fn verify_fails_on_the_printed_ingredients() {
    let o = syncdmpc(&["verify", "--fixture", "sec5-printed"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("terminal-region"), "{}", stderr(&o));
}

#[test]
fn verify_rejects_a_disturbance_above_the_bound() {
    let o = syncdmpc(&["verify", "--fixture", "sec5", "--eta", "1e-3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("disturbance-bound"));
}

#[test]
fn run_writes_traces_for_three_agents() {
    let dir = tempfile::tempdir().unwrap();
    let o = syncdmpc(&["run", "--fixture", "sec5", "--steps", "30", "--seed", "4", "--strict", "--out-dir", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["agent_1.csv", "agent_2.csv", "agent_3.csv", "events.csv", "summary.toml"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let rows = fs::read_to_string(dir.path().join("agent_2.csv")).unwrap().lines().count();
    assert_eq!(rows, 31);
    assert!(stdout(&o).contains("seed 4"));
}

#[test]
fn config_with_swapped_radii_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::sec5();
    cfg.agents[0].eps_r = cfg.agents[0].eps;
    let file = dir.path().join("bad.toml");
    fs::write(&file, cfg.to_toml_string().unwrap()).unwrap();
    let o = syncdmpc(&["run", "--config", path(&file), "--out-dir", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps_r"), "{}", stderr(&o));
}

#[test]
fn zero_eta_override_runs_undisturbed_with_full_phases() {
    let dir = tempfile::tempdir().unwrap();
    let o = syncdmpc(&["run", "--fixture", "sec5", "--steps", "30", "--eta", "0", "--out-dir", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("agent_3.csv")).unwrap();
    // d_norm column is zero everywhere
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let d = header.iter().position(|h| *h == "d_norm").unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(d) == Some("0")));
    let summary = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert!(summary.contains("max_phase = 6"), "{summary}");
}

#[test]
fn plotdata_writes_five_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run = syncdmpc(&["run", "--fixture", "sec5", "--steps", "25", "--out-dir", path(dir.path())]);
    assert!(run.status.success(), "{}", stderr(&run));
    let plots = dir.path().join("plots");
    let o = syncdmpc(&["plotdata", "--trace", path(dir.path()), "--out-dir", path(&plots)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 5);
    let first = fs::read(plots.join("fig2_errors.csv")).unwrap();
    let again = syncdmpc(&["plotdata", "--trace", path(dir.path()), "--out-dir", path(&plots)]);
    assert!(again.status.success());
    assert_eq!(fs::read(plots.join("fig2_errors.csv")).unwrap(), first);
}

#[test]
fn plotdata_names_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("agent_1.csv"), "k,agent,mode\n").unwrap();
    let o = syncdmpc(&["plotdata", "--trace", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing columns"), "{}", stderr(&o));
}

#[test]
fn unknown_verbosity_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_syncdmpc"))
        .args(["run", "--fixture", "sec5", "--steps", "2", "--out-dir", path(dir.path())])
        .env("SYNCDMPC_TRACE", "loud")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SYNCDMPC_TRACE"));
}

#[test]
fn config_and_fixture_are_exclusive() {
    let o = syncdmpc(&["verify", "--config", "x.toml", "--fixture", "sec5"]);
    assert!(!o.status.success());
    let o = syncdmpc(&["verify"]);
    assert!(!o.status.success());
}
