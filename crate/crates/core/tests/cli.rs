use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_tsac");

fn spec(name: &str, extra: &str, features: &str) -> String {
    format!(
        r#"{{
        "name": "{name}",
        "run": {{
            "mdp": {{"generate": {{"n_states": 2, "n_actions": 2, "smoothing": 0.2, "seed": 1}}}},
            "features": {features},
            "policy": {{"kind": "gaussian", "d_theta": 2, "seed": 3}},
            "total_steps": 100
        }},
        "n_seeds": 1,
        "output_dir": "out"{extra}
    }}"#
    )
}

const ORTHO: &str = r#"{"kind": "orthogonalized_random", "d": 1, "seed": 2}"#;

fn write_spec(dir: &Path, file: &str, text: &str) -> PathBuf {
    let p = dir.join(file);
    std::fs::write(&p, text).unwrap();
    p
}

fn tsac(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("TSAC_OUT");
    if let Some(dir) = out_env {
        cmd.env("TSAC_OUT", dir);
    }
    cmd.output().unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn smoke_run_writes_one_csv_and_two_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_spec(dir.path(), "spec.json", &spec("smoke", "", ORTHO));
    let start = Instant::now();
    let out = tsac(&["run", path.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 1.0);
    let mode_dir = dir.path().join("out/smoke/two_timescale");
    assert_eq!(files_in(&mode_dir), vec!["analysis.json", "ensemble.json", "seed_000.csv"]);
    let csv = std::fs::read_to_string(mode_dir.join("seed_000.csv")).unwrap();
    assert!(csv.starts_with("step,samples,grad_j_sq,critic_err_sq,eta_err_sq,j_value,eta,omega_norm"));
    assert_eq!(csv.lines().count(), 1 + 101);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let text = spec("det", r#", "mode": "both""#, ORTHO).replace(r#""n_seeds": 1"#, r#""n_seeds": 3"#);
    let path = write_spec(dir.path(), "spec.json", &text);
    let read_all = || {
        let mut all = Vec::new();
        for mode in ["two_timescale", "decoupled"] {
            for i in 0..3 {
                let p = dir.path().join(format!("out/det/{mode}/seed_00{i}.csv"));
                all.push(std::fs::read(p).unwrap());
            }
        }
        all
    };
    assert!(tsac(&["run", path.to_str().unwrap(), "--jobs", "3"], None).status.success());
    let first = read_all();
    assert!(tsac(&["run", path.to_str().unwrap(), "--jobs", "1"], None).status.success());
    assert_eq!(first, read_all());
}

#[test]
fn mode_both_shares_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_spec(dir.path(), "spec.json", &spec("pair", r#", "mode": "both""#, ORTHO));
    assert!(tsac(&["run", path.to_str().unwrap()], None).status.success());
    let read = |mode: &str| -> serde_json::Value {
        let p = dir.path().join(format!("out/pair/{mode}/ensemble.json"));
        serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    };
    let (a, b) = (read("two_timescale"), read("decoupled"));
    assert_eq!(a["problem"], b["problem"]);
    assert_eq!(a["spec"], b["spec"]);
    assert_eq!(a["mode"], "two_timescale");
    assert_eq!(b["mode"], "decoupled");
    assert_eq!(a["runs"][0]["seed"], b["runs"][0]["seed"]);
}

#[test]
fn output_env_overrides_directory() {
    let dir = tempfile::tempdir().unwrap();
    let alt = tempfile::tempdir().unwrap();
    let path = write_spec(dir.path(), "spec.json", &spec("env", "", ORTHO));
    assert!(tsac(&["run", path.to_str().unwrap()], Some(alt.path())).status.success());
    assert!(alt.path().join("env/two_timescale/seed_000.csv").exists());
    assert!(!dir.path().join("out").exists());
    let doc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(alt.path().join("env/two_timescale/ensemble.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["flags"]["TSAC_OUT"], alt.path().to_str().unwrap());
}

#[test]
fn parse_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_spec(dir.path(), "bad.json", "{ not json");
    assert_eq!(tsac(&["run", bad.to_str().unwrap()], None).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(tsac(&["run", missing.to_str().unwrap()], None).status.code(), Some(2));
    assert_eq!(tsac(&["frobnicate"], None).status.code(), Some(2));
    let zero = write_spec(dir.path(), "zero.json", &spec("z", "", ORTHO).replace(r#""n_seeds": 1"#, r#""n_seeds": 0"#));
    assert_eq!(tsac(&["run", zero.to_str().unwrap()], None).status.code(), Some(2));
}

#[test]
fn one_hot_features_violate_the_margin() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_spec(dir.path(), "spec.json", &spec("onehot", "", r#"{"kind": "one_hot"}"#));
    let out = tsac(&["audit", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("probe 0"), "{stderr}");
    let out = tsac(&["run", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta probe 0"));
    assert!(!dir.path().join("out/onehot/two_timescale/seed_000.csv").exists());
}

#[test]
fn audit_reports_margin_and_constants() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_spec(dir.path(), "spec.json", &spec("audit", "", ORTHO));
    let out = tsac(&["audit", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["lambda over", "mixing profile", "policy regularity", "omega* Lipschitz", "eps_app"] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
}

#[test]
fn single_action_audit_has_zero_score_bound() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = r#"{"inline": {"n_states": 2, "n_actions": 1, "u_r": 1.0,
        "transition": [[[0.5, 0.5]], [[0.3, 0.7]]], "reward": [[1.0], [-1.0]]}}"#;
    let text = spec("single", "", ORTHO).replace(
        r#"{"generate": {"n_states": 2, "n_actions": 2, "smoothing": 0.2, "seed": 1}}"#,
        mdp,
    );
    let path = write_spec(dir.path(), "spec.json", &text);
    let out = tsac(&["audit", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("(audited):  B = 0.0000"), "{text}");
}

#[test]
fn truncated_paper_experiment_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsac(&["paper-experiment", "--t", "1000", "--seeds", "2"], Some(dir.path()));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).collect();
    assert_eq!(lines.len(), 10, "{text}");
    for id in ["1 oracle", "2 policy", "3 baseline", "4 algorithm", "10 determinism"] {
        assert!(lines.iter().any(|l| l.starts_with("[PASS]") && l.contains(id)), "{id} in {text}");
    }
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("acceptance.json")).unwrap()).unwrap();
    assert_eq!(doc["options"]["total_steps"], 1000);
    assert_eq!(doc["criteria"].as_array().unwrap().len(), 10);
}
