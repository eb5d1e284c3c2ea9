use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use adanet_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = adanet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn load(name: &str) -> *mut AdanetScenario {
    let mut handle = ptr::null_mut();
    assert_eq!(
        adanet_scenario_load(c(name).as_ptr(), &mut handle),
        AdanetStatus::Ok
    );
    assert!(!handle.is_null());
    handle
}

unsafe fn set(s: *mut AdanetScenario, assignment: &str) -> AdanetStatus {
    adanet_scenario_set(s, c(assignment).as_ptr())
}

unsafe fn set_many(s: *mut AdanetScenario, batch: &[&str]) -> AdanetStatus {
    let owned: Vec<CString> = batch.iter().map(|a| c(a)).collect();
    let ptrs: Vec<*const std::ffi::c_char> = owned.iter().map(|a| a.as_ptr()).collect();
    adanet_scenario_set_many(s, ptrs.as_ptr(), ptrs.len())
}

#[test]
fn run_and_read_back() {
    unsafe {
        let s = load("example5");
        assert_eq!(adanet_scenario_nodes(s), 8);
        // One at a time, the shorter horizon would strand the probe iterations.
        assert_eq!(set(s, "iterations=1000"), AdanetStatus::Config);
        assert!(last_error().contains("past the horizon"));
        assert_eq!(
            set_many(
                s,
                &["iterations=1000", "ensemble_size=4", "probe_iterations=[]"]
            ),
            AdanetStatus::Ok
        );
        let mut r = ptr::null_mut();
        assert_eq!(adanet_run(s, &mut r), AdanetStatus::Ok);

        let mut steady = [0.0; 8];
        let mut written = 0;
        let usup = c("usup");
        assert_eq!(
            adanet_result_steady_state_db(r, usup.as_ptr(), steady.as_mut_ptr(), 8, &mut written),
            AdanetStatus::Ok
        );
        assert_eq!(written, 8);
        assert!(steady.iter().all(|v| v.is_finite() && *v < 0.0));

        // Too small a buffer reports the needed length and leaves it untouched.
        let mut small = [7.0; 3];
        assert_eq!(
            adanet_result_network_msd_db(r, usup.as_ptr(), small.as_mut_ptr(), 3, &mut written),
            AdanetStatus::OutOfRange
        );
        assert_eq!(written, 1000);
        assert_eq!(small, [7.0; 3]);
        let mut curve = vec![0.0; written];
        assert_eq!(
            adanet_result_network_msd_db(
                r,
                usup.as_ptr(),
                curve.as_mut_ptr(),
                curve.len(),
                &mut written
            ),
            AdanetStatus::Ok
        );
        assert!(curve[999] < curve[0]);

        assert_eq!(
            adanet_result_steady_state_db(
                r,
                c("ls_alg").as_ptr(),
                steady.as_mut_ptr(),
                8,
                &mut written
            ),
            AdanetStatus::OutOfRange
        );
        assert!(last_error().contains("ls_alg"));

        adanet_result_free(r);
        adanet_scenario_free(s);
    }
}

#[test]
fn matches_the_library() {
    unsafe {
        let s = load("example5");
        assert_eq!(
            set_many(
                s,
                &[
                    "iterations=400",
                    "ensemble_size=3",
                    "probe_iterations=[]",
                    "master_seed=5"
                ]
            ),
            AdanetStatus::Ok
        );
        let mut r = ptr::null_mut();
        assert_eq!(adanet_run(s, &mut r), AdanetStatus::Ok);
        let mut got = [0.0; 8];
        adanet_result_steady_state_db(
            r,
            c("noncooperative").as_ptr(),
            got.as_mut_ptr(),
            8,
            ptr::null_mut(),
        );

        let mut cfg = adanet::simrunner::shipped("example5").unwrap();
        cfg.apply_overrides(&[
            "iterations=400",
            "ensemble_size=3",
            "probe_iterations=[]",
            "master_seed=5",
        ])
        .unwrap();
        let want = adanet::run_scenario(&cfg).unwrap().traces
            [&adanet::ProtocolKind::Noncooperative]
            .steady_state_default()
            .unwrap();
        assert_eq!(got.to_vec(), want);
        adanet_result_free(r);
        adanet_scenario_free(s);
    }
}

#[test]
fn json_round_trip_and_theory() {
    unsafe {
        let s = load("example5");
        let json = adanet_scenario_to_json(s);
        assert!(!json.is_null());
        let mut copy = ptr::null_mut();
        assert_eq!(adanet_scenario_from_json(json, &mut copy), AdanetStatus::Ok);
        adanet_string_free(json);

        let mut curve = [0.0; 50];
        let mut written = 0;
        assert_eq!(
            adanet_theory_network_msd_db(copy, 50, curve.as_mut_ptr(), 50, &mut written),
            AdanetStatus::Ok
        );
        assert_eq!(written, 50);
        assert!(curve[49] < curve[0]);
        adanet_scenario_free(copy);
        adanet_scenario_free(s);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(
            adanet_scenario_load(c("example9").as_ptr(), &mut s),
            AdanetStatus::Config
        );
        assert!(s.is_null());
        assert!(last_error().contains("example9"));

        assert_eq!(
            adanet_scenario_load(ptr::null(), &mut s),
            AdanetStatus::NullPointer
        );
        assert_eq!(
            adanet_scenario_load(c("example5").as_ptr(), ptr::null_mut()),
            AdanetStatus::NullPointer
        );
        assert_eq!(
            adanet_scenario_from_json(c("{not json").as_ptr(), &mut s),
            AdanetStatus::Config
        );
        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            adanet_scenario_load(bad_utf8.as_ptr().cast(), &mut s),
            AdanetStatus::InvalidUtf8
        );

        let s = load("example5");
        assert_eq!(set(s, "nonsense=1"), AdanetStatus::Config);
        assert_eq!(set(s, "order=0"), AdanetStatus::Config);
        assert_eq!(
            adanet_scenario_nodes(s),
            8,
            "failed overrides leave the scenario intact"
        );

        assert_eq!(set(s, "rule=\"lms\""), AdanetStatus::Ok);
        assert_eq!(
            set_many(
                s,
                &[
                    "mu.0=5.0",
                    "iterations=3000",
                    "ensemble_size=2",
                    "probe_iterations=[]"
                ]
            ),
            AdanetStatus::Ok
        );
        assert_eq!(
            adanet_scenario_set_many(s, ptr::null(), 1),
            AdanetStatus::NullPointer
        );
        let mut r = ptr::null_mut();
        assert_eq!(adanet_run(s, &mut r), AdanetStatus::Diverged);
        assert!(r.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(adanet_run(ptr::null(), &mut r), AdanetStatus::NullPointer);
        assert_eq!(adanet_scenario_nodes(ptr::null()), 0);
        assert!(adanet_scenario_to_json(ptr::null()).is_null());
        adanet_scenario_free(s);
        adanet_scenario_free(ptr::null_mut());
        adanet_result_free(ptr::null_mut());
        adanet_string_free(ptr::null_mut());
    }
}

#[test]
fn counts_and_version() {
    assert_eq!(
        adanet_multiplication_count(AdanetAlgorithm::Usup, 50, 6),
        457
    );
    assert_eq!(
        adanet_multiplication_count(AdanetAlgorithm::LsAlg, 50, 6),
        814
    );
    assert_eq!(
        adanet_multiplication_count(AdanetAlgorithm::MsdAlg, 50, 10),
        3500
    );
    let v = unsafe { CStr::from_ptr(adanet_version()) }
        .to_str()
        .unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// The generated header must compile as C99 and as C++.
#[test]
fn header_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = include.join("adanet.h");
    assert!(
        header.exists(),
        "build script did not write {}",
        header.display()
    );
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "adanet.h"
int probe(void) {
    AdanetScenario *s = 0;
    AdanetStatus st = adanet_scenario_load("example5", &s);
    size_t n = adanet_scenario_nodes(s);
    adanet_scenario_free(s);
    return (int)st + (int)n + (int)adanet_multiplication_count(ADANET_ALGORITHM_USUP, 50, 6);
}
"#,
    )
    .unwrap();
    for (compiler, flags) in [
        ("cc", &["-std=c99"][..]),
        ("c++", &["-x", "c++", "-std=c++17"][..]),
    ] {
        let status = Command::new(compiler)
            .args(flags)
            .args(["-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(&include)
            .arg(&src)
            .status();
        match status {
            Ok(st) => assert!(st.success(), "{compiler} rejected the header"),
            Err(e) => eprintln!("skipping {compiler}: {e}"),
        }
    }
}
