//! End-to-end tests of the `salab` binary: exit codes, emitted files, CSV
//! content against independently computed values, and rerun determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn salab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salab"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn one_state_mdp(dir: &Path) -> String {
    write_config(
        dir,
        "mdp.json",
        r#"{"n_states": 1, "n_actions": 1, "gamma": 0.5,
            "reward": [[1.0]], "transition": [[[1.0]]]}"#,
    )
}

#[test]
fn anchors_run_matches_hand_computed_first_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "schedule": {"family": "polylog", "c_alpha": 1.0, "nu": 0.5},
            "run": {"horizon_m": 40}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = salab(&["anchors", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let table = fs::read_to_string(out_dir.join("anchors.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "m,T_m,t_m,bar_alpha_m,ratio");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    // T_0 = 1/3 for this family, t_0 = 0, and the first interval holds the
    // masses of steps 0 and 1: 1/(3 sqrt(ln 3)) + 1/(4 sqrt(ln 4)).
    assert_eq!(first[0], "0");
    assert_eq!(first[1].parse::<f64>().unwrap(), 1.0 / 3.0);
    assert_eq!(first[2], "0");
    let bar0 = first[3].parse::<f64>().unwrap();
    assert!((bar0 - 0.5303519774053386).abs() <= 1e-13, "bar0 = {bar0}");
    let second: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(second[0], "1");
    assert_eq!(second[2], "2");
    assert!(fs::metadata(out_dir.join("manifest.json")).is_ok());
}

#[test]
fn q_run_converges_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = one_state_mdp(dir.path());
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{
                "mdp": {{"path": {mdp:?}}},
                "schedule": {{"family": "poly", "c_alpha": 1.0, "nu": 0.9}},
                "run": {{"steps": 100000, "master_seed": 5}}
            }}"#
        ),
    );
    let out_dir = dir.path().join("out");
    let out = salab(&["run-q", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("check finite: pass"), "{stdout}");

    let track = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(track.lines().next().unwrap(), "t,error_sq");
    let last = track.lines().last().unwrap();
    let err_sq: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    // One state, one action, reward 1, discount 1/2: the fixed point is the
    // geometric series value 2, and the iteration is noiseless.
    assert!(err_sq <= 1e-4, "final error_sq = {err_sq}");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "run-q");
    assert_eq!(manifest["tool"]["name"], "salab");
    assert_eq!(manifest["effective"]["master_seed"], 5);
}

#[test]
fn oversized_steps_diverge_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = one_state_mdp(dir.path());
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{
                "mdp": {{"path": {mdp:?}}},
                "schedule": {{"family": "poly", "c_alpha": 1e6, "nu": 0.9}},
                "run": {{"steps": 10000}}
            }}"#
        ),
    );
    let out_dir = dir.path().join("out");
    let out = salab(&["run-q", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("check finite: FAIL"), "{stdout}");
}

#[test]
fn invalid_schedule_exponent_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = one_state_mdp(dir.path());
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{
                "mdp": {{"path": {mdp:?}}},
                "schedule": {{"family": "poly", "c_alpha": 1.0, "nu": 0.5}},
                "run": {{"steps": 100}}
            }}"#
        ),
    );
    let out = salab(&["run-q", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("schedule.nu"), "{stderr}");
}

#[test]
fn missing_config_flag_and_missing_file_are_distinct_failures() {
    let out = salab(&["anchors"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    let out = salab(&["anchors", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn td_run_with_policy_files_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = write_config(
        dir.path(),
        "mdp.json",
        r#"{"n_states": 2, "n_actions": 2, "gamma": 0.4,
            "reward": [[1.0, 0.0], [0.0, 1.0]],
            "transition": [[[0.5, 0.5], [0.5, 0.5]], [[0.9, 0.1], [0.1, 0.9]]]}"#,
    );
    let mu = write_config(dir.path(), "mu.json", "[[0.5, 0.5], [0.5, 0.5]]");
    let pi = write_config(dir.path(), "pi.json", "[[0.8, 0.2], [0.3, 0.7]]");
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{
                "mdp": {{"path": {mdp:?}}},
                "policy": {{"mu": {mu:?}, "pi": {pi:?}}},
                "schedule": {{"family": "polylog", "c_alpha": 1.0, "nu": 0.5}},
                "run": {{"steps": 50000}}
            }}"#
        ),
    );
    let out_dir = dir.path().join("out");
    let out = salab(&["run-td", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::metadata(out_dir.join("trajectory.csv")).is_ok());
}

#[test]
fn moreau_check_flow_exits_zero_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "mdp": {"random": {"n_states": 3, "n_actions": 2, "gamma": 0.6, "seed": 8}}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = salab(&["moreau-check", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("moreau.json")).unwrap()).unwrap();
    assert!(report["kappa_prime"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_override_changes_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "mdp": {"random": {"n_states": 2, "n_actions": 2, "gamma": 0.3, "seed": 4}},
            "schedule": {"family": "poly", "c_alpha": 1.0, "nu": 0.9},
            "run": {"steps": 2000, "master_seed": 1}
        }"#,
    );
    let run = |out_dir: &Path, extra: &[&str]| {
        let mut args = vec!["run-q", "--config", &cfg, "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = salab(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(out_dir.join("trajectory.csv")).unwrap()
    };
    let base = run(&dir.path().join("a"), &[]);
    let same = run(&dir.path().join("b"), &[]);
    let reseeded = run(&dir.path().join("c"), &["--seed", "2"]);
    assert_eq!(base, same);
    assert_ne!(base, reseeded);
}

#[test]
fn rerun_outputs_differ_only_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "mdp": {"random": {"n_states": 2, "n_actions": 2, "gamma": 0.3, "seed": 4}},
            "schedule": {"family": "polylog", "c_alpha": 1.0, "nu": 0.5},
            "run": {"steps": 3000, "n_seeds": 3, "master_seed": 11}
        }"#,
    );
    let dirs = [dir.path().join("a"), dir.path().join("b")];
    for d in &dirs {
        let out = salab(&["run-q", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<String> = fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.len() > 1);
    for name in names {
        let a = fs::read(dirs[0].join(&name)).unwrap();
        let b = fs::read(dirs[1].join(&name)).unwrap();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(a, b, "{name} differs between identical reruns");
    }
}
