use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use horn_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(horn_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn model_lifecycle_and_quotient() {
    let mut model: *mut HornModel = ptr::null_mut();
    let st = unsafe { horn_model_new(c("gb").as_ptr(), c("torus2").as_ptr(), 1.5, &mut model) };
    assert_eq!(st, HornStatus::Ok);
    let (mut dim, mut oracle) = (0usize, 0usize);
    assert_eq!(unsafe { horn_model_quotient_dim(model, &mut dim) }, HornStatus::Ok);
    assert_eq!(unsafe { horn_model_oracle_quotient_dim(model, 1e-7, &mut oracle) }, HornStatus::Ok);
    assert_eq!((dim, oracle), (2, 2));
    unsafe { horn_model_free(model) };
    unsafe { horn_model_free(ptr::null_mut()) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut model: *mut HornModel = ptr::null_mut();
    let st = unsafe { horn_model_new(c("gb").as_ptr(), c("klein").as_ptr(), 2.0, &mut model) };
    assert_eq!(st, HornStatus::UnknownCrossSection);
    assert!(last_error().contains("klein"));
    assert!(model.is_null());
    let st = unsafe { horn_model_new(c("dirac").as_ptr(), c("torus2").as_ptr(), 2.0, &mut model) };
    assert_eq!(st, HornStatus::Precondition);
    let st = unsafe { horn_model_new(ptr::null(), c("torus2").as_ptr(), 2.0, &mut model) };
    assert_eq!(st, HornStatus::NullPointer);
    let mut idx = 0i64;
    assert_eq!(unsafe { horn_gb_index(c("circle").as_ptr(), 0.3, &mut idx) }, HornStatus::NotIntegral);
}

#[test]
fn index_values() {
    let mut idx = 0i64;
    for (ext, want) in [("max", 1), ("min", -1)] {
        let st = unsafe { horn_dirac_index(c("torus3").as_ptr(), c(ext).as_ptr(), 0.0, 2.0, &mut idx) };
        assert_eq!(st, HornStatus::Ok);
        assert_eq!(idx, want);
    }
    assert_eq!(unsafe { horn_gb_index(c("circle").as_ptr(), 1.0, &mut idx) }, HornStatus::Ok);
    assert_eq!(idx, 2);
}

#[test]
fn profiles_and_collar_integral() {
    let mut p: *mut HornProfile = ptr::null_mut();
    assert_eq!(unsafe { horn_profile_power(2.0, 1.0, &mut p) }, HornStatus::Ok);
    let (mut h, mut dh) = (0.0, 0.0);
    assert_eq!(unsafe { horn_profile_eval(p, 0.5, &mut h, &mut dh) }, HornStatus::Ok);
    assert_eq!((h, dh), (0.25, 1.0));
    assert_eq!(unsafe { horn_profile_eval(p, 2.0, &mut h, ptr::null_mut()) }, HornStatus::InvalidParameter);
    let mut e = 0.0;
    assert_eq!(unsafe { horn_surface_euler_integral(p, 0.1, 0.5, &mut e) }, HornStatus::Ok);
    assert!((e + 0.8).abs() < 1e-12);
    unsafe { horn_profile_free(p) };
    assert_eq!(unsafe { horn_profile_horn(1.0, 0.25, 1.0, &mut p) }, HornStatus::InvalidParameter);
}

#[test]
fn contraction_and_cli_bridge() {
    let mut s = 0u32;
    assert_eq!(unsafe { horn_contraction_threshold(0.5, &mut s) }, HornStatus::Ok);
    assert_eq!(s, 3);
    let args = [c("surface"), c("--skip"), c("--format"), c("csv")];
    let argv: Vec<*const c_char> = args.iter().map(|a| a.as_ptr()).collect();
    let (mut code, mut out) = (-1i32, ptr::null_mut());
    assert_eq!(unsafe { horn_run(argv.len(), argv.as_ptr(), &mut code, &mut out) }, HornStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { horn_string_free(out) };
    assert_eq!(code, 0);
    assert!(text.starts_with("beta,euler_integral,gb_index\n"));
    let bad = [c("classify"), c("--n"), c("klein")];
    let argv: Vec<*const c_char> = bad.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(unsafe { horn_run(argv.len(), argv.as_ptr(), &mut code, &mut out) }, HornStatus::Ok);
    unsafe { horn_string_free(out) };
    assert_eq!(code, 2);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/horn.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "horn_last_error",
        "horn_status_name",
        "horn_model_new",
        "horn_model_free",
        "horn_model_quotient_dim",
        "horn_model_oracle_quotient_dim",
        "horn_dirac_index",
        "horn_gb_index",
        "horn_profile_power",
        "horn_profile_horn",
        "horn_profile_free",
        "horn_profile_eval",
        "horn_surface_euler_integral",
        "horn_contraction_threshold",
        "horn_run",
        "horn_string_free",
        "typedef struct HornModel HornModel",
        "HORN_STATUS_NOT_INTEGRAL = 6",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C client against the header and the static library.
#[test]
fn c_client_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipped");
        return;
    }
    // The static library is built next to this test binary.
    let exe_dir = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = exe_dir.join("libhorn_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = std::env::temp_dir().join(format!("horn-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("client.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "horn.h"
int main(void) {
    HornModel *m = NULL;
    size_t dim = 0;
    int64_t idx = 0;
    if (horn_model_new("dirac", "torus3", 2.0, &m) != HORN_STATUS_OK) return 10;
    if (horn_model_quotient_dim(m, &dim) != HORN_STATUS_OK) return 11;
    horn_model_free(m);
    if (horn_dirac_index("torus3", "max", 0.0, 2.0, &idx) != HORN_STATUS_OK) return 12;
    if (horn_model_new("gb", "nowhere", 2.0, &m) != HORN_STATUS_UNKNOWN_CROSS_SECTION) return 13;
    printf("%zu %lld\n", dim, (long long)idx);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.join("client");
    let include = header().parent().unwrap().to_path_buf();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "2 1\n");
    std::fs::remove_dir_all(&dir).unwrap();
}
