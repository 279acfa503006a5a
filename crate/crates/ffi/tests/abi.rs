use std::ffi::{CStr, CString};
use std::ptr;

use tsac_ffi::*;

const CONFIG: &str = r#"{
    "mdp": {"generate": {"n_states": 4, "n_actions": 2, "smoothing": 0.2, "seed": 3}},
    "features": {"kind": "orthogonalized_random", "d": 2, "seed": 5},
    "policy": {"kind": "gaussian", "d_theta": 3, "seed": 7},
    "total_steps": 500,
    "oracle_every": 50,
    "decoupled": {"critic_steps": "paper", "sample_budget": 300}
}"#;

fn problem(json: &str) -> (TsacStatus, *mut TsacProblem) {
    let c = CString::new(json).unwrap();
    let mut p = ptr::null_mut();
    let status = unsafe { tsac_problem_from_json(c.as_ptr(), &mut p) };
    (status, p)
}

fn last_error() -> String {
    let p = tsac_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn problem_lifecycle_and_run() {
    let (status, p) = problem(CONFIG);
    assert_eq!(status, TsacStatus::Ok);
    let (mut ns, mut na, mut d, mut dt) = (0, 0, 0, 0);
    assert_eq!(unsafe { tsac_problem_dims(p, &mut ns, &mut na, &mut d, &mut dt) }, TsacStatus::Ok);
    assert_eq!((ns, na, d, dt), (4, 2, 2, 3));
    let (mut lambda, mut r) = (0.0, 0.0);
    assert_eq!(unsafe { tsac_problem_margins(p, &mut lambda, &mut r) }, TsacStatus::Ok);
    assert!(lambda > 0.0 && (r - 2.0 / lambda).abs() < 1e-9);

    let mut run = ptr::null_mut();
    assert_eq!(unsafe { tsac_problem_run(p, 42, TsacMode::TwoTimescale, &mut run) }, TsacStatus::Ok);
    let n = unsafe { tsac_run_checkpoint_count(run) };
    assert_eq!(n, 11);
    assert_eq!(unsafe { tsac_run_samples(run) }, 500);
    let mut c = TsacCheckpoint::default();
    assert_eq!(unsafe { tsac_run_checkpoint(run, n - 1, &mut c) }, TsacStatus::Ok);
    assert_eq!((c.step, c.samples), (500, 500));
    assert_eq!(unsafe { tsac_run_checkpoint(run, n, &mut c) }, TsacStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));

    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { tsac_run_csv(run, &mut csv) }, TsacStatus::Ok);
    let text = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    assert_eq!(text.lines().count(), 12);

    let mut again = ptr::null_mut();
    assert_eq!(unsafe { tsac_problem_run(p, 42, TsacMode::TwoTimescale, &mut again) }, TsacStatus::Ok);
    let mut csv2 = ptr::null_mut();
    assert_eq!(unsafe { tsac_run_csv(again, &mut csv2) }, TsacStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(csv2) }.to_str().unwrap(), text);

    let mut dec = ptr::null_mut();
    assert_eq!(unsafe { tsac_problem_run(p, 42, TsacMode::Decoupled, &mut dec) }, TsacStatus::Ok);
    assert!(unsafe { tsac_run_samples(dec) } <= 300);

    unsafe {
        tsac_string_free(csv);
        tsac_string_free(csv2);
        tsac_run_free(run);
        tsac_run_free(again);
        tsac_run_free(dec);
        tsac_problem_free(p);
    }
}

#[test]
fn oracle_json_round_trips() {
    let (_, p) = problem(CONFIG);
    let theta = [0.1, -0.2, 0.3];
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tsac_problem_oracle_json(p, theta.as_ptr(), 3, &mut out) }, TsacStatus::Ok);
    let doc: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    let mu: Vec<f64> = serde_json::from_value(doc["mu"].clone()).unwrap();
    assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(doc["grad_j"].as_array().unwrap().len(), 3);
    unsafe { tsac_string_free(out) };

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tsac_problem_oracle_json(p, theta.as_ptr(), 2, &mut out) }, TsacStatus::InvalidArgument);
    assert!(out.is_null());
    let bad = [f64::NAN, 0.0, 0.0];
    assert_eq!(unsafe { tsac_problem_oracle_json(p, bad.as_ptr(), 3, &mut out) }, TsacStatus::InvalidArgument);
    unsafe { tsac_problem_free(p) };
}

#[test]
fn error_statuses() {
    let (status, p) = problem("{");
    assert_eq!(status, TsacStatus::Parse);
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    let one_hot = CONFIG.replace(r#"{"kind": "orthogonalized_random", "d": 2, "seed": 5}"#, r#"{"kind": "one_hot"}"#);
    let (status, p) = problem(&one_hot);
    assert_eq!(status, TsacStatus::AssumptionViolated);
    assert!(p.is_null());
    assert!(last_error().contains("probe 0"));

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tsac_problem_from_json(ptr::null(), &mut out) }, TsacStatus::NullPointer);
    assert_eq!(unsafe { tsac_problem_run(ptr::null(), 1, TsacMode::TwoTimescale, ptr::null_mut()) }, TsacStatus::NullPointer);
    assert_eq!(unsafe { tsac_run_checkpoint_count(ptr::null()) }, 0);
    unsafe {
        tsac_problem_free(ptr::null_mut());
        tsac_run_free(ptr::null_mut());
        tsac_string_free(ptr::null_mut());
    }
}

#[test]
fn generated_mdp_is_valid_json() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tsac_mdp_generate_json(3, 2, 0.1, 9, &mut out) }, TsacStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { tsac_string_free(out) };
    let mdp = tsac::FiniteMdp::from_json(&text).unwrap();
    assert_eq!((mdp.n_states(), mdp.n_actions()), (3, 2));
    assert_eq!(unsafe { tsac_mdp_generate_json(3, 2, 0.0, 9, &mut out) }, TsacStatus::InvalidArgument);
    assert!(last_error().contains("smoothing"));
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(tsac_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
