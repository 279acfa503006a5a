//! C ABI for the `tsac` crate.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! functions and released by the matching `*_free`. Every fallible call returns
//! a [`TsacStatus`]; on failure the message is available from
//! [`tsac_last_error_message`] on the same thread. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`tsac_string_free`]. Panics never unwind into C; they surface as
//! [`TsacStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tsac::agent::{run_decoupled_on, run_two_timescale_on, Problem, RunConfig, RunParams};
use tsac::analysis::RunMetrics;
use tsac::env::MdpGenerator;
use tsac::{compute_oracle, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsacStatus {
    Ok = 0,
    InvalidArgument = 1,
    /// Unparseable JSON or an invalid configuration.
    Parse = 2,
    /// The negative-definiteness margin is not positive at some probe.
    AssumptionViolated = 3,
    Runtime = 4,
    NullPointer = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsacMode {
    TwoTimescale = 0,
    Decoupled = 1,
}

/// Resolved problem instance (MDP, policy class, features, schedule).
pub struct TsacProblem {
    problem: Problem,
    config: RunConfig,
}

/// Metrics of one finished run.
pub struct TsacRun {
    metrics: RunMetrics,
}

/// One logged checkpoint.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TsacCheckpoint {
    pub step: u64,
    pub samples: u64,
    pub grad_j_sq: f64,
    pub critic_err_sq: f64,
    pub eta_err_sq: f64,
    pub j_value: f64,
    pub eta: f64,
    pub omega_norm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> TsacStatus {
    match err {
        Error::Parse(_) | Error::Json(_) => TsacStatus::Parse,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::NonFiniteTheta(_) => {
            TsacStatus::InvalidArgument
        }
        Error::AssumptionViolated { .. } => TsacStatus::AssumptionViolated,
        _ => TsacStatus::Runtime,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (TsacStatus, String)>) -> TsacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsacStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {msg}"));
            TsacStatus::Panic
        }
    }
}

fn lift(err: Error) -> (TsacStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (TsacStatus, String) {
    (TsacStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (TsacStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| (TsacStatus::InvalidArgument, format!("{what} is not UTF-8: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, (TsacStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| (TsacStatus::Runtime, e.to_string()))
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tsac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tsac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn tsac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a problem from a run-configuration JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsac_problem_from_json(json: *const c_char, out: *mut *mut TsacProblem) -> TsacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = read_str(json, "json")?;
        let config = RunConfig::from_json(text).map_err(|e| (TsacStatus::Parse, e.to_string()))?;
        let problem = Problem::resolve(&config, None).map_err(lift)?;
        *out = Box::into_raw(Box::new(TsacProblem { problem, config }));
        Ok(())
    })
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `p` must be null or a live handle from [`tsac_problem_from_json`].
#[no_mangle]
pub unsafe extern "C" fn tsac_problem_free(p: *mut TsacProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Dimensions of the problem: states, actions, critic features, policy parameters.
///
/// # Safety
/// `p` must be a live handle; each out-pointer must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn tsac_problem_dims(
    p: *const TsacProblem,
    n_states: *mut usize,
    n_actions: *mut usize,
    d: *mut usize,
    d_theta: *mut usize,
) -> TsacStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        let vals = [
            (n_states, p.problem.mdp.n_states()),
            (n_actions, p.problem.mdp.n_actions()),
            (d, p.problem.features.dim()),
            (d_theta, p.problem.policy.d_theta()),
        ];
        for (ptr, v) in vals {
            if let Some(slot) = ptr.as_mut() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// Smallest margin over the probe set and the projection radius in use.
///
/// # Safety
/// `p` must be a live handle; each out-pointer must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn tsac_problem_margins(
    p: *const TsacProblem,
    lambda_min: *mut f64,
    r_omega: *mut f64,
) -> TsacStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        if let Some(slot) = lambda_min.as_mut() {
            *slot = p.problem.probes.min;
        }
        if let Some(slot) = r_omega.as_mut() {
            *slot = p.problem.r_omega;
        }
        Ok(())
    })
}

/// Exact oracle quantities at `theta` as a JSON document.
///
/// # Safety
/// `theta` must point to `len` doubles; `out` must be a valid pointer. The
/// returned string is released with [`tsac_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tsac_problem_oracle_json(
    p: *const TsacProblem,
    theta: *const f64,
    len: usize,
    out: *mut *mut c_char,
) -> TsacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        if theta.is_null() && len > 0 {
            return Err(null("theta"));
        }
        let theta = if len == 0 { &[][..] } else { std::slice::from_raw_parts(theta, len) };
        let rep = compute_oracle(&p.problem.mdp, &p.problem.policy, theta, &p.problem.features).map_err(lift)?;
        let text = serde_json::to_string(&rep).map_err(|e| (TsacStatus::Runtime, e.to_string()))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// Runs one seed with the problem's configured length and cadence.
///
/// For [`TsacMode::Decoupled`] the configured sample budget and critic schedule apply.
///
/// # Safety
/// `p` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsac_problem_run(
    p: *const TsacProblem,
    seed: u64,
    mode: TsacMode,
    out: *mut *mut TsacRun,
) -> TsacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        let params = RunParams::from_config(&p.config);
        let metrics = match mode {
            TsacMode::TwoTimescale => run_two_timescale_on(&p.problem, &params, seed),
            TsacMode::Decoupled => {
                let d = p.config.decoupled;
                let params = RunParams { total_steps: d.sample_budget.unwrap_or(p.config.total_steps), ..params };
                run_decoupled_on(&p.problem, &params, seed, &|k| d.critic_steps.steps(k))
            }
        }
        .map_err(lift)?;
        *out = Box::into_raw(Box::new(TsacRun { metrics }));
        Ok(())
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `r` must be null or a live handle from [`tsac_problem_run`].
#[no_mangle]
pub unsafe extern "C" fn tsac_run_free(r: *mut TsacRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of checkpoints in a run; 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tsac_run_checkpoint_count(r: *const TsacRun) -> usize {
    r.as_ref().map_or(0, |r| r.metrics.checkpoints.len())
}

/// Environment samples consumed by a run; 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tsac_run_samples(r: *const TsacRun) -> u64 {
    r.as_ref().map_or(0, |r| r.metrics.samples)
}

/// Copies checkpoint `index` into `out`.
///
/// # Safety
/// `r` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsac_run_checkpoint(r: *const TsacRun, index: usize, out: *mut TsacCheckpoint) -> TsacStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = r.metrics.checkpoints.get(index).ok_or_else(|| {
            (
                TsacStatus::InvalidArgument,
                format!("checkpoint {index} out of range ({} available)", r.metrics.checkpoints.len()),
            )
        })?;
        *out = TsacCheckpoint {
            step: c.step,
            samples: c.samples,
            grad_j_sq: c.grad_j_sq,
            critic_err_sq: c.critic_err_sq,
            eta_err_sq: c.eta_err_sq,
            j_value: c.j_value,
            eta: c.eta,
            omega_norm: c.omega_norm,
        };
        Ok(())
    })
}

/// The run's checkpoint table in the CLI's CSV format.
///
/// # Safety
/// `r` must be a live handle; `out` must be a valid pointer. The returned
/// string is released with [`tsac_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tsac_run_csv(r: *const TsacRun, out: *mut *mut c_char) -> TsacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let r = r.as_ref().ok_or_else(|| null("run"))?;
        *out = into_c_string(r.metrics.to_csv_string().map_err(lift)?)?;
        Ok(())
    })
}

/// Generates a random smoothed MDP and returns it as JSON.
///
/// # Safety
/// `out` must be a valid pointer. The returned string is released with
/// [`tsac_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tsac_mdp_generate_json(
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
    seed: u64,
    out: *mut *mut c_char,
) -> TsacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mdp = MdpGenerator::new(n_states, n_actions, smoothing).generate(seed).map_err(lift)?;
        *out = into_c_string(mdp.to_json().map_err(lift)?)?;
        Ok(())
    })
}
