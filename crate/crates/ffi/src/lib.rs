//! C ABI over the flexassess toolkit.
//!
//! Models and assessments are opaque handles owned by the caller and released with
//! their `_free` function. Every fallible call returns an [`FaStatus`]; the message
//! of the most recent failure on the calling thread is kept for [`fa_last_error`].
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;

use flexassess::constraints::{build_operating_constraints, build_placement, DisturbanceUncertainty};
use flexassess::robust::oracle::verification_suite;
use flexassess::robust::{assess_flexibility, AssessmentOptions, FlexibilityAssessment, Gamma2Policy, RobustProblem};
use flexassess::sim::BuildingPair;
use flexassess::thermal::{lift_dynamics, ThermalModel};
use flexassess::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Parse = 3,
    Solver = 4,
    Infeasible = 5,
    Io = 6,
    Panic = 7,
}

/// Identified control model.
pub struct FaModel(ThermalModel);

/// Result of one window assessment, including the certified policy.
pub struct FaAssessment(FlexibilityAssessment);

/// One assessment window. All arrays are read, never retained.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FaWindow {
    /// Steps in the window; the DR request covers all of them.
    pub horizon: usize,
    /// Initial model state, `n` entries.
    pub x0: *const f64,
    pub x0_len: usize,
    /// Nominal grid power per step, W.
    pub w_bar: *const f64,
    /// PV upper bound per step, W.
    pub pv_bound: *const f64,
    /// Forecast `[ambient °C, irradiance W/m²]` per step, `2 * horizon` entries.
    pub d_forecast: *const f64,
    pub comfort_low_c: f64,
    pub comfort_high_c: f64,
    pub power_cap_w: f64,
    pub delta_ambient_c: f64,
    pub delta_irradiance_wm2: f64,
    /// `γ₂ = ratio·γ₁`.
    pub gamma2_ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> FaStatus {
    match err {
        Error::Numerical(_) | Error::Unbounded(_) => FaStatus::Solver,
        Error::InfeasibleNominal(_) | Error::InfeasibleRequest(_) => FaStatus::Infeasible,
        Error::Parse { .. } | Error::Json(_) => FaStatus::Parse,
        Error::Io(_) => FaStatus::Io,
        _ => FaStatus::InvalidArgument,
    }
}

struct Failure(FaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FaStatus::NullArgument, format!("{what} is null"))
}

/// Runs `body`, records any failure and converts panics into [`FaStatus::Panic`].
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            FaStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn out_ptr<'a, T>(out: *mut *mut T) -> Result<&'a mut *mut T, Failure> {
    // SAFETY: checked for null; the caller guarantees it is writable.
    unsafe { out.as_mut() }.ok_or_else(|| null("output pointer"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and always
/// NUL-terminated when `cap > 0`). Returns the buffer size the full message needs.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fa_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = (bytes.len() - 1).min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// The bundled second-order model, identified from the bundled plant.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn fa_model_bundled(out: *mut *mut FaModel) -> FaStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let pair = BuildingPair::bundled()?;
        *out = Box::into_raw(Box::new(FaModel(pair.control)));
        Ok(())
    })
}

/// Parses a model from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_from_json(json: *const c_char, out: *mut *mut FaModel) -> FaStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| Failure(FaStatus::Parse, e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(FaModel(ThermalModel::from_json(&value)?)));
        Ok(())
    })
}

/// Serializes a model; release the string with [`fa_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_to_json(model: *const FaModel, out: *mut *mut c_char) -> FaStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let text = model.0.to_json().to_string();
        *out = CString::new(text).map_err(|e| Failure(FaStatus::InvalidArgument, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// State dimension of the model, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_model_state_dim(model: *const FaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n())
}

/// Index of the room temperature within the state vector.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_model_room_index(model: *const FaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.room_index)
}

/// One model step: `x_next = A x + B u + R w + D d`.
///
/// # Safety
/// `x` and `x_next` must hold `n` values, `d` two.
#[no_mangle]
pub unsafe extern "C" fn fa_model_step(model: *const FaModel, x: *const f64, u_w: f64, w_w: f64, d: *const f64, x_next: *mut f64) -> FaStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let n = model.n();
        let x = DVector::from_column_slice(slice(x, n, "x")?);
        let d = slice(d, model.p(), "d")?;
        if x_next.is_null() {
            return Err(null("x_next"));
        }
        let next = model.step(&x, u_w, w_w, d);
        ptr::copy_nonoverlapping(next.as_ptr(), x_next, n);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fa_model_free(model: *mut FaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn fa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn window_problem(model: &ThermalModel, w: &FaWindow) -> Result<RobustProblem, Failure> {
    let n_steps = w.horizon;
    if n_steps == 0 {
        return Err(Failure(FaStatus::InvalidArgument, "window horizon must be positive".into()));
    }
    if w.x0_len != model.n() {
        return Err(Failure(FaStatus::InvalidArgument, format!("x0 has {} entries, the model has {} states", w.x0_len, model.n())));
    }
    let x0 = DVector::from_column_slice(slice(w.x0, w.x0_len, "x0")?);
    let w_bar = DVector::from_column_slice(slice(w.w_bar, n_steps, "w_bar")?);
    let pv = slice(w.pv_bound, n_steps, "pv_bound")?;
    let d_hat = DVector::from_column_slice(slice(w.d_forecast, model.p() * n_steps, "d_forecast")?);
    let lifted = lift_dynamics(model, n_steps)?;
    let constraints = build_operating_constraints((w.comfort_low_c, w.comfort_high_c), pv, w.power_cap_w, model.n(), model.room_index)?;
    let uncertainty = DisturbanceUncertainty::new(vec![w.delta_ambient_c, w.delta_irradiance_wm2], n_steps)?;
    let placement = build_placement(n_steps, 0, n_steps)?;
    Ok(RobustProblem::new(lifted, constraints, uncertainty, placement, x0, w_bar, d_hat)?)
}

/// Largest robustly deliverable uniform reduction `γ₁*` for one window, with its policy.
/// An infeasible window is not an error: the handle reports `feasible = false`.
///
/// # Safety
/// `model` must be a live handle, `window` valid with arrays of the stated sizes,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fa_assess(model: *const FaModel, window: *const FaWindow, out: *mut *mut FaAssessment) -> FaStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let window = window.as_ref().ok_or_else(|| null("window"))?;
        if !(window.gamma2_ratio >= 0.0) {
            return Err(Failure(FaStatus::InvalidArgument, "gamma2_ratio must be non-negative".into()));
        }
        let problem = window_problem(model, window)?;
        let options = AssessmentOptions { gamma2: Gamma2Policy::Ratio(window.gamma2_ratio), ..Default::default() };
        let assessment = assess_flexibility(&problem, &options)?;
        *out = Box::into_raw(Box::new(FaAssessment(assessment)));
        Ok(())
    })
}

/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_assessment_gamma1(a: *const FaAssessment) -> f64 {
    a.as_ref().map_or(f64::NAN, |a| a.0.gamma1_star)
}

/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_assessment_gamma2(a: *const FaAssessment) -> f64 {
    a.as_ref().map_or(f64::NAN, |a| a.0.gamma2_star)
}

/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_assessment_feasible(a: *const FaAssessment) -> bool {
    a.as_ref().is_some_and(|a| a.0.feasible)
}

/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fa_assessment_horizon(a: *const FaAssessment) -> usize {
    a.as_ref().map_or(0, |a| a.0.policy.horizon())
}

/// PV action of the certified policy at `step` for a realized request `w_tilde`
/// (`h` entries) and forecast errors `d_tilde` (`2 * horizon` entries, only those
/// before `step` are read).
///
/// # Safety
/// `a` must be a live handle, the arrays of the stated sizes and `u_w` writable.
#[no_mangle]
pub unsafe extern "C" fn fa_assessment_action(
    a: *const FaAssessment,
    step: usize,
    w_tilde: *const f64,
    w_len: usize,
    d_tilde: *const f64,
    d_len: usize,
    u_w: *mut f64,
) -> FaStatus {
    guard(|| {
        let a = &a.as_ref().ok_or_else(|| null("assessment"))?.0;
        let policy = &a.policy;
        let (n_steps, h) = (policy.horizon(), a.h());
        if step >= n_steps || w_len != h || d_len != policy.channels * n_steps {
            return Err(Failure(
                FaStatus::InvalidArgument,
                format!("expected step < {n_steps}, {h} request entries and {} forecast errors", policy.channels * n_steps),
            ));
        }
        let w = DVector::from_column_slice(slice(w_tilde, w_len, "w_tilde")?);
        let d = DVector::from_column_slice(slice(d_tilde, d_len, "d_tilde")?);
        let u = u_w.as_mut().ok_or_else(|| null("u_w"))?;
        *u = policy.action(step, &w, &d);
        Ok(())
    })
}

/// # Safety
/// `a` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fa_assessment_free(a: *mut FaAssessment) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Runs the randomized duality and vertex-oracle checks; `passed` receives the number
/// of instances that pass every check.
///
/// # Safety
/// `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_verify(instances: usize, seed: u64, passed: *mut usize) -> FaStatus {
    guard(|| {
        let passed = passed.as_mut().ok_or_else(|| null("passed"))?;
        let checks = verification_suite(instances, seed, None)?;
        *passed = checks.iter().filter(|c| c.passed()).count();
        Ok(())
    })
}
