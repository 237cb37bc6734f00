use std::ffi::{c_char, CStr, CString};
use std::ptr;

use flexassess_ffi::*;

fn last_error() -> String {
    let needed = unsafe { fa_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; needed];
    unsafe { fa_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn bundled() -> *mut FaModel {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fa_model_bundled(&mut model) }, FaStatus::Ok);
    assert!(!model.is_null());
    model
}

struct Inputs {
    x0: Vec<f64>,
    room: f64,
    w_bar: Vec<f64>,
    pv: Vec<f64>,
    d: Vec<f64>,
}

impl Inputs {
    /// Holds the model at steady state under a constant 1 kW grid draw.
    fn steady(model: *const FaModel, horizon: usize) -> Self {
        let n = unsafe { fa_model_state_dim(model) };
        let d = [5.0, 0.0];
        let mut x = vec![20.0; n];
        let mut next = vec![0.0; n];
        for _ in 0..5000 {
            assert_eq!(unsafe { fa_model_step(model, x.as_ptr(), 0.0, 1000.0, d.as_ptr(), next.as_mut_ptr()) }, FaStatus::Ok);
            std::mem::swap(&mut x, &mut next);
        }
        let room = x[unsafe { fa_model_room_index(model) }];
        Self { x0: x, room, w_bar: vec![1000.0; horizon], pv: vec![0.0; horizon], d: d.repeat(horizon) }
    }

    /// Window whose comfort band is offset from the steady room temperature.
    fn window(&self, band: (f64, f64)) -> FaWindow {
        let band = (self.room + band.0, self.room + band.1);
        FaWindow {
            horizon: self.w_bar.len(),
            x0: self.x0.as_ptr(),
            x0_len: self.x0.len(),
            w_bar: self.w_bar.as_ptr(),
            pv_bound: self.pv.as_ptr(),
            d_forecast: self.d.as_ptr(),
            comfort_low_c: band.0,
            comfort_high_c: band.1,
            power_cap_w: 3000.0,
            delta_ambient_c: 0.5,
            delta_irradiance_wm2: 0.0,
            gamma2_ratio: 0.25,
        }
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(fa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_json_round_trips() {
    let model = bundled();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { fa_model_to_json(model, &mut json) }, FaStatus::Ok);
    let mut copy = ptr::null_mut();
    assert_eq!(unsafe { fa_model_from_json(json, &mut copy) }, FaStatus::Ok);
    assert_eq!(unsafe { fa_model_state_dim(copy) }, unsafe { fa_model_state_dim(model) });
    unsafe {
        fa_string_free(json);
        fa_model_free(copy);
        fa_model_free(model);
    }
}

#[test]
fn malformed_json_reports_a_parse_error() {
    let text = CString::new("{not json").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fa_model_from_json(text.as_ptr(), &mut model) }, FaStatus::Parse);
    assert!(model.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected() {
    assert_eq!(unsafe { fa_model_bundled(ptr::null_mut()) }, FaStatus::NullArgument);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fa_assess(ptr::null(), ptr::null(), &mut out) }, FaStatus::NullArgument);
    assert!(last_error().contains("null"));
    assert!(unsafe { fa_assessment_gamma1(ptr::null()) }.is_nan());
    assert_eq!(unsafe { fa_model_state_dim(ptr::null()) }, 0);
    unsafe {
        fa_model_free(ptr::null_mut());
        fa_assessment_free(ptr::null_mut());
        fa_string_free(ptr::null_mut());
    }
}

#[test]
fn error_message_is_truncated_safely() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fa_assess(ptr::null(), ptr::null(), &mut out) }, FaStatus::NullArgument);
    let full = last_error();
    let mut buf = [1 as c_char; 4];
    let needed = unsafe { fa_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(needed, full.len() + 1);
    assert_eq!(buf[3], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), &full[..3]);
}

#[test]
fn wrong_state_length_is_an_invalid_argument() {
    let model = bundled();
    let inputs = Inputs::steady(model, 6);
    let mut window = inputs.window((-2.0, 2.0));
    window.x0_len = 1;
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fa_assess(model, &window, &mut out) }, FaStatus::InvalidArgument);
    assert!(last_error().contains("states"));
    unsafe { fa_model_free(model) };
}

#[test]
fn assessment_certifies_a_reduction_and_exposes_the_policy() {
    let model = bundled();
    let horizon = 6;
    let inputs = Inputs::steady(model, horizon);
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { fa_assess(model, &inputs.window((-2.0, 2.0)), &mut a) }, FaStatus::Ok, "{}", last_error());
    let g1 = unsafe { fa_assessment_gamma1(a) };
    assert!(unsafe { fa_assessment_feasible(a) });
    assert!(g1 > 0.0 && g1 <= 1000.0 + 1e-9, "{g1}");
    assert!((unsafe { fa_assessment_gamma2(a) } - 0.25 * g1).abs() < 1e-6);
    assert_eq!(unsafe { fa_assessment_horizon(a) }, horizon);

    let w = vec![-g1; horizon];
    let d = vec![0.0; 2 * horizon];
    let mut u = f64::NAN;
    assert_eq!(unsafe { fa_assessment_action(a, 0, w.as_ptr(), w.len(), d.as_ptr(), d.len(), &mut u) }, FaStatus::Ok);
    assert!(u.is_finite() && u >= -1e-6);
    assert_eq!(unsafe { fa_assessment_action(a, horizon, w.as_ptr(), w.len(), d.as_ptr(), d.len(), &mut u) }, FaStatus::InvalidArgument);
    unsafe {
        fa_assessment_free(a);
        fa_model_free(model);
    }
}

#[test]
fn infeasible_window_is_reported_on_the_handle() {
    let model = bundled();
    let inputs = Inputs::steady(model, 4);
    let mut a = ptr::null_mut();
    // The room starts 10 °C below the band.
    let status = unsafe { fa_assess(model, &inputs.window((10.0, 11.0)), &mut a) };
    assert_eq!(status, FaStatus::Ok, "{}", last_error());
    assert!(!unsafe { fa_assessment_feasible(a) });
    assert_eq!(unsafe { fa_assessment_gamma1(a) }, 0.0);
    unsafe {
        fa_assessment_free(a);
        fa_model_free(model);
    }
}

#[test]
fn verification_suite_passes_through_the_c_api() {
    let mut passed = 0;
    assert_eq!(unsafe { fa_verify(3, 5, &mut passed) }, FaStatus::Ok, "{}", last_error());
    assert_eq!(passed, 3);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/flexassess.h")).unwrap();
    for name in [
        "fa_version",
        "fa_last_error",
        "fa_model_bundled",
        "fa_model_from_json",
        "fa_model_to_json",
        "fa_model_state_dim",
        "fa_model_step",
        "fa_model_room_index",
        "fa_model_free",
        "fa_string_free",
        "fa_assess",
        "fa_assessment_gamma1",
        "fa_assessment_gamma2",
        "fa_assessment_feasible",
        "fa_assessment_horizon",
        "fa_assessment_action",
        "fa_assessment_free",
        "fa_verify",
        "FA_STATUS_PANIC",
        "typedef struct FaModel FaModel",
    ] {
        assert!(header.contains(name), "{name} missing from the header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"flexassess.h\"\nint main(void) { FaWindow w = {0}; (void)w; return fa_version() == 0; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
