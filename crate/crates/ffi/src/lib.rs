//! C ABI over `horn_core`.
//!
//! Every fallible call returns a [`HornStatus`] and writes results through out
//! pointers. Models and profiles are opaque handles released with their
//! `_free` function. The message of the last failure on the calling thread is
//! available from [`horn_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use horn_core::channels::{quotient_dimension, ExtensionSpec};
use horn_core::geometry::{catalog_cross_section, dirac_normal_form, normal_form, GeometricOperatorModel, DEFAULT_CUTOFF};
use horn_core::homotopy::contraction_threshold;
use horn_core::index::{self, warped_surface_euler_integral};
use horn_core::oracle::oracle_quotient_dim;
use horn_core::warp::{make_power_horn, pure_power, WarpProfile};
use horn_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HornStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    UnknownCrossSection = 4,
    Precondition = 5,
    NotIntegral = 6,
    NoConvergence = 7,
    Config = 8,
    Panic = 9,
    Other = 10,
}

impl From<&Error> for HornStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::InvalidProfile(_) | Error::IncompatibleEndpoints(_) => {
                HornStatus::InvalidParameter
            }
            Error::OutOfTriangle { .. } | Error::NonIntegrable(_) | Error::ChannelRejected(_) => {
                HornStatus::InvalidParameter
            }
            Error::UnknownCrossSection(_) => HornStatus::UnknownCrossSection,
            Error::Precondition(_) => HornStatus::Precondition,
            Error::NotIntegral(_) => HornStatus::NotIntegral,
            Error::NoConvergence(_) => HornStatus::NoConvergence,
            Error::Config(_) => HornStatus::Config,
            Error::Io(_) => HornStatus::Other,
        }
    }
}

/// Geometric operator model on a horn over a catalog cross-section.
pub struct HornModel(GeometricOperatorModel);

/// Warping function `h`.
pub struct HornProfile(WarpProfile);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Status(HornStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HornStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HornStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            HornStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic");
            HornStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(HornStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(HornStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `out` must be null or valid for a write of `T`.
unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn horn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn horn_status_name(status: HornStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HornStatus::Ok => c"ok",
        HornStatus::NullPointer => c"null pointer",
        HornStatus::InvalidUtf8 => c"invalid utf-8",
        HornStatus::InvalidParameter => c"invalid parameter",
        HornStatus::UnknownCrossSection => c"unknown cross-section",
        HornStatus::Precondition => c"precondition violated",
        HornStatus::NotIntegral => c"not integral",
        HornStatus::NoConvergence => c"no convergence",
        HornStatus::Config => c"configuration error",
        HornStatus::Panic => c"panic",
        HornStatus::Other => c"error",
    };
    s.as_ptr()
}

/// Builds the model of `op` (`dirac`, `gb`, `signature`) over `cross_section` with exponent `alpha`.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_model_new(
    op: *const c_char,
    cross_section: *const c_char,
    alpha: f64,
    out: *mut *mut HornModel,
) -> HornStatus {
    guard(|| {
        let kind = text(op, "op")?.parse()?;
        let section = catalog_cross_section(text(cross_section, "cross_section")?, DEFAULT_CUTOFF)?;
        let model = normal_form(kind, &section, alpha, None)?;
        put(out, Box::into_raw(Box::new(HornModel(model))), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`horn_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn horn_model_free(model: *mut HornModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Dimension of `D_max / D_min`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_model_quotient_dim(model: *const HornModel, out: *mut usize) -> HornStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        put(out, quotient_dimension(&m.0).dim, "out")
    })
}

/// Quotient dimension counted by the finite-difference oracle with singular-value tolerance `tol`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_model_oracle_quotient_dim(model: *const HornModel, tol: f64, out: *mut usize) -> HornStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        put(out, oracle_quotient_dim(&m.0, tol)?, "out")
    })
}

/// Dirac index on a horn over `cross_section` with the default spin structure;
/// `extension` is `min`, `max`, `delta` or `W:s1,s2,...`.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_dirac_index(
    cross_section: *const c_char,
    extension: *const c_char,
    ahat_integral: f64,
    alpha: f64,
    out: *mut i64,
) -> HornStatus {
    guard(|| {
        let section = catalog_cross_section(text(cross_section, "cross_section")?, DEFAULT_CUTOFF)?;
        let spin = section.default_spin();
        let model = dirac_normal_form(&section, alpha, spin)?;
        let w = ExtensionSpec::parse(text(extension, "extension")?, &model)?;
        put(out, index::horn_dirac_index(&section, spin, &w, ahat_integral, alpha)?.index, "out")
    })
}

/// Gauss-Bonnet index of a manifold with horns over `cross_section`, given `∫ e`.
///
/// # Safety
/// `cross_section` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_gb_index(cross_section: *const c_char, euler_integral: f64, out: *mut i64) -> HornStatus {
    guard(|| {
        let section = catalog_cross_section(text(cross_section, "cross_section")?, DEFAULT_CUTOFF)?;
        put(out, index::horn_gb_index(&section, euler_integral)?.index, "out")
    })
}

/// `h = x^beta` on `(0, eps]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_profile_power(beta: f64, eps: f64, out: *mut *mut HornProfile) -> HornStatus {
    guard(|| put(out, Box::into_raw(Box::new(HornProfile(pure_power(beta, eps)?))), "out"))
}

/// Horn profile `x^alpha` on `(0, eps0]`, blended to a smooth end at `eps`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_profile_horn(alpha: f64, eps0: f64, eps: f64, out: *mut *mut HornProfile) -> HornStatus {
    guard(|| put(out, Box::into_raw(Box::new(HornProfile(make_power_horn(alpha, eps0, eps, false)?))), "out"))
}

/// # Safety
/// `profile` must be null or a handle from a `horn_profile_*` constructor not yet freed.
#[no_mangle]
pub unsafe extern "C" fn horn_profile_free(profile: *mut HornProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// `h(x)` and `h'(x)`; either out pointer may be null.
///
/// # Safety
/// `profile` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_profile_eval(profile: *const HornProfile, x: f64, h: *mut f64, dh: *mut f64) -> HornStatus {
    guard(|| {
        let p = &profile.as_ref().ok_or_else(|| null("profile"))?.0;
        if !(x > 0.0 && x <= p.eps()) {
            return Err(Failure::Status(HornStatus::InvalidParameter, format!("x = {x} outside (0, {}]", p.eps())));
        }
        if !h.is_null() {
            h.write(p.h(x));
        }
        if !dh.is_null() {
            dh.write(p.dh(x));
        }
        Ok(())
    })
}

/// `-∫_delta^eps h''` over a warped surface collar.
///
/// # Safety
/// `profile` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_surface_euler_integral(
    profile: *const HornProfile,
    delta: f64,
    eps: f64,
    out: *mut f64,
) -> HornStatus {
    guard(|| {
        let p = &profile.as_ref().ok_or_else(|| null("profile"))?.0;
        put(out, warped_surface_euler_integral(p, delta, eps)?, "out")
    })
}

/// Smallest integer `s` for which `x^s` contracts `[0, 1 - w]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_contraction_threshold(w: f64, out: *mut u32) -> HornStatus {
    guard(|| put(out, contraction_threshold(w)?, "out"))
}

/// Runs a CLI command line (`argv[0]` excluded) and returns its rendered output.
/// The process exit code (0, 1 or 2) is written to `exit_code`; the output
/// string must be released with [`horn_string_free`].
///
/// # Safety
/// `argv` must point to `argc` valid NUL-terminated strings; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn horn_run(
    argc: usize,
    argv: *const *const c_char,
    exit_code: *mut i32,
    output: *mut *mut c_char,
) -> HornStatus {
    guard(|| {
        if argc > 0 && argv.is_null() {
            return Err(null("argv"));
        }
        let mut args = vec!["horn".to_string()];
        for i in 0..argc {
            args.push(text(*argv.add(i), "argv entry")?.to_string());
        }
        let (code, rendered) = run_to_string(&args);
        let c = CString::new(rendered).map_err(|_| Failure::Status(HornStatus::Other, "output has NUL".into()))?;
        put(exit_code, code, "exit_code")?;
        put(output, c.into_raw(), "output")
    })
}

fn run_to_string(args: &[String]) -> (i32, String) {
    use horn_core::cli::{error_exit_code, resolve, run, CliError, EXIT_CONFIG};
    let cfg = match resolve(args) {
        Ok(c) => c,
        Err(CliError::Usage(e)) => return (EXIT_CONFIG, e.to_string()),
        Err(CliError::Run(e)) => return (EXIT_CONFIG, e.to_string()),
    };
    match run(&cfg).and_then(|o| Ok((o.exit_code(), o.render(cfg.format)?))) {
        Ok(r) => r,
        Err(e) => (error_exit_code(&e), e.to_string()),
    }
}

/// # Safety
/// `s` must be null or a string returned by [`horn_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn horn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
