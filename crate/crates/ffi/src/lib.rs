//! C interface to the apalm solver.
//!
//! Every entry point returns an [`ApalmStatus`]; on failure the message is kept
//! per thread and can be read with [`apalm_last_error`]. Handles are opaque and
//! must be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use apalm::config::Backend;
use apalm::experiment::{execute, write_artifacts, RunOutcome};
use apalm::{ApalmError, ExperimentConfig};

/// Result of an interface call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApalmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Config = 10,
    Io = 11,
    Dimension = 12,
    NonFiniteGradient = 13,
    Unbounded = 14,
    StepsizeDomain = 15,
    Staleness = 16,
    Stagnation = 17,
    MonitoringWindow = 18,
    WorkerPanic = 19,
    Internal = 99,
}

/// A parsed experiment configuration.
pub struct ApalmConfig {
    inner: ExperimentConfig,
}

/// A finished run.
pub struct ApalmRun {
    config: ExperimentConfig,
    outcome: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &ApalmError) -> ApalmStatus {
    match e {
        ApalmError::Config(_)
        | ApalmError::Parse { .. }
        | ApalmError::Regularizer(_)
        | ApalmError::Schema(_)
        | ApalmError::Schedule(_) => ApalmStatus::Config,
        ApalmError::Io { .. } => ApalmStatus::Io,
        ApalmError::Dimension(_) | ApalmError::BlockIndex { .. } => ApalmStatus::Dimension,
        ApalmError::NonFiniteGradient { .. } => ApalmStatus::NonFiniteGradient,
        ApalmError::Unbounded { .. } => ApalmStatus::Unbounded,
        ApalmError::StepsizeDomain { .. } => ApalmStatus::StepsizeDomain,
        ApalmError::Staleness { .. } | ApalmError::StalenessOverflow { .. } => ApalmStatus::Staleness,
        ApalmError::Stagnation { .. } => ApalmStatus::Stagnation,
        ApalmError::MonitoringWindow(_) => ApalmStatus::MonitoringWindow,
        ApalmError::WorkerPanic(_) => ApalmStatus::WorkerPanic,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ApalmStatus, String)>) -> ApalmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ApalmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            ApalmStatus::Internal
        }
    }
}

fn lib<T>(r: apalm::Result<T>) -> Result<T, (ApalmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (ApalmStatus, String)> {
    if p.is_null() {
        return Err((ApalmStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ApalmStatus::InvalidUtf8, "string argument is not UTF-8".into()))
}

unsafe fn ref_arg<'a, T>(p: *const T) -> Result<&'a T, (ApalmStatus, String)> {
    p.as_ref().ok_or((ApalmStatus::NullPointer, "null handle".into()))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, (ApalmStatus, String)> {
    p.as_mut().ok_or((ApalmStatus::NullPointer, "null output pointer".into()))
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn apalm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a TOML experiment file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn apalm_config_load(path: *const c_char, out: *mut *mut ApalmConfig) -> ApalmStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let path = str_arg(path)?;
        let inner = lib(ExperimentConfig::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(ApalmConfig { inner }));
        Ok(())
    })
}

/// Sets the worker count of a parallel configuration; fails on a replay one.
///
/// # Safety
/// `cfg` must come from [`apalm_config_load`].
#[no_mangle]
pub unsafe extern "C" fn apalm_config_set_workers(cfg: *mut ApalmConfig, workers: usize) -> ApalmStatus {
    guard(|| {
        let cfg = out_arg(cfg)?;
        if !matches!(cfg.inner.backend, Backend::Parallel(_)) {
            return Err((ApalmStatus::Config, "worker count set on a replay configuration".into()));
        }
        lib(cfg.inner.override_workers(&workers.to_string()))
    })
}

/// Caps the number of iterations.
///
/// # Safety
/// `cfg` must come from [`apalm_config_load`].
#[no_mangle]
pub unsafe extern "C" fn apalm_config_set_max_iters(cfg: *mut ApalmConfig, max_iters: u64) -> ApalmStatus {
    guard(|| {
        let cfg = out_arg(cfg)?;
        if max_iters == 0 {
            return Err((ApalmStatus::Config, "max_iters must be positive".into()));
        }
        cfg.inner.solver.max_iters = max_iters;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`apalm_config_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apalm_config_free(cfg: *mut ApalmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the experiment. Output files are not written.
///
/// # Safety
/// `cfg` must come from [`apalm_config_load`] and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn apalm_run(cfg: *const ApalmConfig, out: *mut *mut ApalmRun) -> ApalmStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let cfg = ref_arg(cfg)?;
        let outcome = lib(execute(&cfg.inner))?;
        *out = Box::into_raw(Box::new(ApalmRun {
            config: cfg.inner.clone(),
            outcome,
        }));
        Ok(())
    })
}

/// Writes the trace, summary and (parallel) schedule to the configured paths.
///
/// # Safety
/// `run` must come from [`apalm_run`].
#[no_mangle]
pub unsafe extern "C" fn apalm_run_write(run: *const ApalmRun) -> ApalmStatus {
    guard(|| {
        let run = ref_arg(run)?;
        lib(write_artifacts(&run.config, &run.outcome))
    })
}

/// Process exit code the command-line tool would report: 0, 2 or 3.
///
/// # Safety
/// `run` must come from [`apalm_run`].
#[no_mangle]
pub unsafe extern "C" fn apalm_run_exit_code(run: *const ApalmRun) -> i32 {
    run.as_ref().map_or(-1, |r| r.outcome.exit_code)
}

/// # Safety
/// `run` must come from [`apalm_run`].
#[no_mangle]
pub unsafe extern "C" fn apalm_run_iterations(run: *const ApalmRun) -> u64 {
    run.as_ref().map_or(0, |r| r.outcome.trace.iterations())
}

/// Final objective value, or NaN for a NULL handle.
///
/// # Safety
/// `run` must come from [`apalm_run`].
#[no_mangle]
pub unsafe extern "C" fn apalm_run_objective(run: *const ApalmRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.outcome.trace.last().psi)
}

/// Final stationarity residual used by the stopping rule.
///
/// # Safety
/// `run` must come from [`apalm_run`].
#[no_mangle]
pub unsafe extern "C" fn apalm_run_residual(run: *const ApalmRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| {
        let last = r.outcome.trace.last();
        match r.outcome.effective.variant {
            apalm::Variant::Stochastic => last.res_w,
            apalm::Variant::Deterministic => last.res_c,
        }
    })
}

/// Number of doubles in the final point.
///
/// # Safety
/// `run` must come from [`apalm_run`].
#[no_mangle]
pub unsafe extern "C" fn apalm_run_point_len(run: *const ApalmRun) -> usize {
    run.as_ref().map_or(0, |r| r.outcome.trace.final_point.iter_flat().count())
}

/// Copies the final point, blocks concatenated, into `buf`.
///
/// # Safety
/// `run` must come from [`apalm_run`]; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn apalm_run_point(run: *const ApalmRun, buf: *mut f64, len: usize) -> ApalmStatus {
    guard(|| {
        let run = ref_arg(run)?;
        let need = run.outcome.trace.final_point.iter_flat().count();
        if len < need {
            return Err((ApalmStatus::BufferTooSmall, format!("need {need} doubles, got {len}")));
        }
        if buf.is_null() {
            return Err((ApalmStatus::NullPointer, "null buffer".into()));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (d, v) in dst.iter_mut().zip(run.outcome.trace.final_point.iter_flat()) {
            *d = v;
        }
        Ok(())
    })
}

/// The trace as CSV text. Free with [`apalm_string_free`].
///
/// # Safety
/// `run` must come from [`apalm_run`] and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn apalm_run_trace_csv(run: *const ApalmRun, out: *mut *mut c_char) -> ApalmStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let run = ref_arg(run)?;
        *out = CString::new(run.outcome.trace.to_csv()).expect("csv has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apalm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `run` must come from [`apalm_run`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apalm_run_free(run: *mut ApalmRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
