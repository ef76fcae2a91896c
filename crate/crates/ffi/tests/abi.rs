use std::ffi::{CStr, CString};
use std::ptr;

use lqmfpg_ffi::*;

fn reference_model() -> *mut LqmfpgModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { lqmfpg_model_scalar_reference(false, &mut m) }, LqmfpgStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = lqmfpg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn optimal_gains_and_costs() {
    let m = reference_model();
    unsafe {
        let (mut d, mut l) = (0usize, 0usize);
        assert_eq!(lqmfpg_model_dims(m, &mut d, &mut l), LqmfpgStatus::Ok);
        assert_eq!((d, l), (1, 1));
        let (mut k, mut lg, mut c) = (0.0, 0.0, 0.0);
        assert_eq!(lqmfpg_optimal_gains(m, &mut k, &mut lg, &mut c), LqmfpgStatus::Ok);
        assert!((k - 0.21463468882900366).abs() < 1e-9);
        assert!((lg - 0.588403348998488).abs() < 1e-9);
        assert!((c - 0.9295217602115341).abs() < 1e-9);

        let (mut gk, mut gl) = (f64::NAN, f64::NAN);
        assert_eq!(lqmfpg_exact_gradient(m, &k, &lg, &mut gk, &mut gl), LqmfpgStatus::Ok);
        assert!(gk.abs() < 1e-8 && gl.abs() < 1e-8);

        let zero = 0.0;
        let mut c0 = 0.0;
        assert_eq!(lqmfpg_exact_cost(m, &zero, &zero, &mut c0), LqmfpgStatus::Ok);
        assert!((c0 - 4.50645).abs() < 1e-4);
        lqmfpg_model_free(m);
    }
}

#[test]
fn inadmissible_parameters_are_reported() {
    let m = reference_model();
    unsafe {
        let (k, l) = (0.0, -0.5);
        let mut ok = true;
        assert_eq!(lqmfpg_is_admissible(m, &k, &l, &mut ok), LqmfpgStatus::Ok);
        assert!(!ok);
        let mut c = 0.0;
        assert_eq!(lqmfpg_exact_cost(m, &k, &l, &mut c), LqmfpgStatus::NotAdmissible);
        assert!(!last_error().is_empty());
        lqmfpg_model_free(m);
    }
}

#[test]
fn null_pointers_are_rejected() {
    unsafe {
        let mut c = 0.0;
        let z = 0.0;
        assert_eq!(lqmfpg_exact_cost(ptr::null(), &z, &z, &mut c), LqmfpgStatus::NullPointer);
        assert!(last_error().contains("model"));
        assert_eq!(lqmfpg_model_scalar_reference(false, ptr::null_mut()), LqmfpgStatus::NullPointer);
        lqmfpg_model_free(ptr::null_mut());
    }
}

#[test]
fn config_text_builds_a_model() {
    let text = CString::new(include_str!("../../core/configs/desk.ini")).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(lqmfpg_model_from_config(text.as_ptr(), &mut m), LqmfpgStatus::Ok);
        let (k, l) = (0.2, 0.5);
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(lqmfpg_exact_cost(m, &k, &l, &mut a), LqmfpgStatus::Ok);
        let t = reference_model();
        assert_eq!(lqmfpg_exact_cost(t, &k, &l, &mut b), LqmfpgStatus::Ok);
        assert_eq!(a, b);
        lqmfpg_model_free(t);
        lqmfpg_model_free(m);

        let bad = CString::new("[model]\nA = 1\n").unwrap();
        let mut m2 = ptr::null_mut();
        assert_eq!(lqmfpg_model_from_config(bad.as_ptr(), &mut m2), LqmfpgStatus::InvalidArgument);
        assert!(m2.is_null());
    }
}

#[test]
fn rollouts_and_estimates_are_seeded() {
    let m = reference_model();
    unsafe {
        let (k, l) = (0.1, 0.4);
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(lqmfpg_mkv_rollout(m, &k, &l, 50, 9, &mut a), LqmfpgStatus::Ok);
        assert_eq!(lqmfpg_mkv_rollout(m, &k, &l, 50, 9, &mut b), LqmfpgStatus::Ok);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(lqmfpg_mkv_rollout(m, &k, &l, 0, 9, &mut a), LqmfpgStatus::InvalidArgument);

        let (mut gk, mut gl) = (0.0, 0.0);
        assert_eq!(
            lqmfpg_estimate_gradient_mkv(m, &k, &l, 200, 50, 0.1, 3, &mut gk, &mut gl),
            LqmfpgStatus::Ok
        );
        assert!(gk.is_finite() && gl.is_finite());
        assert_eq!(
            lqmfpg_estimate_gradient_mkv(m, &k, &l, 0, 50, 0.1, 3, &mut gk, &mut gl),
            LqmfpgStatus::InvalidArgument
        );
        lqmfpg_model_free(m);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/lqmfpg.h");
    for f in [
        "lqmfpg_last_error",
        "lqmfpg_model_scalar_reference",
        "lqmfpg_model_from_config",
        "lqmfpg_model_free",
        "lqmfpg_model_dims",
        "lqmfpg_is_admissible",
        "lqmfpg_exact_cost",
        "lqmfpg_exact_gradient",
        "lqmfpg_optimal_gains",
        "lqmfpg_mkv_rollout",
        "lqmfpg_estimate_gradient_mkv",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct LqmfpgModel LqmfpgModel;"));
}
