use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use binpose::synth::{generate_suite, render_scan, SuiteConfig};
use binpose::{BinSpec, Pose};
use binpose_ffi::*;

fn scene() -> (binpose::StructuredScan, Pose, BinSpec) {
    let cfg = SuiteConfig {
        count: 1,
        ..SuiteConfig::default()
    };
    let s = generate_suite(&cfg, 3).unwrap().remove(0);
    let (scan, gt) = render_scan(&s.scene, &s.camera).unwrap();
    (scan, gt, s.scene.bin)
}

fn bp_bin(bin: &BinSpec) -> BpBinSpec {
    BpBinSpec {
        inner_length: bin.inner_length(),
        inner_width: bin.inner_width(),
        inner_depth: bin.inner_depth(),
        wall_thickness: bin.wall_thickness(),
    }
}

fn bp_pose(p: &Pose) -> BpPose {
    let r = p.rotation();
    let t = p.translation();
    BpPose {
        rotation: [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ],
        translation: [t.x, t.y, t.z],
    }
}

fn new_scan(scan: &binpose::StructuredScan) -> *mut BpScan {
    let flat: Vec<f32> = scan.raw_points().iter().flatten().copied().collect();
    let mut handle = ptr::null_mut();
    let st = unsafe { bp_scan_new(scan.width(), scan.height(), flat.as_ptr(), &mut handle) };
    assert_eq!(st, BpStatus::Ok);
    handle
}

#[test]
fn fit_refine_and_score_through_the_c_abi() {
    let (scan, gt, bin) = scene();
    let handle = new_scan(&scan);
    let (mut w, mut h, mut n) = (0, 0, 0);
    assert_eq!(
        unsafe { bp_scan_info(handle, &mut w, &mut h, &mut n) },
        BpStatus::Ok
    );
    assert_eq!((w, h, n), (scan.width(), scan.height(), scan.valid_count()));

    let bin = bp_bin(&bin);
    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { bp_fit_analytic(handle, &bin, &mut report) },
        BpStatus::Ok
    );
    let mut fitted = bp_pose_identity();
    assert_eq!(
        unsafe { bp_fit_report_pose(report, &mut fitted) },
        BpStatus::Ok
    );
    let gt_c = bp_pose(&gt);
    let (mut te, mut re) = (0.0, 0.0);
    assert_eq!(
        unsafe { bp_pose_errors(&gt_c, &fitted, &mut te, &mut re) },
        BpStatus::Ok
    );
    assert!(te < 10.0 && re < 0.05, "te {te} re {re}");

    let mut outcome = BpIcpOutcome {
        pose: bp_pose_identity(),
        iterations_used: 0,
        final_mean_distance: 0.0,
        paired_points: 0,
        confident: false,
    };
    assert_eq!(
        unsafe { bp_refine_icp(handle, &bin, &gt_c, &mut outcome) },
        BpStatus::Ok
    );
    assert!(outcome.confident && outcome.iterations_used >= 1);
    assert_eq!(
        unsafe { bp_pose_errors(&gt_c, &outcome.pose, &mut te, &mut re) },
        BpStatus::Ok
    );
    assert!(te < 0.5 && re < 0.005, "te {te} re {re}");

    unsafe {
        bp_fit_report_free(report);
        bp_scan_free(handle);
    }
}

#[test]
fn file_round_trip_and_errors() {
    let (scan, _, _) = scene();
    let handle = new_scan(&scan);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("a.scan").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bp_scan_save(handle, path.as_ptr()) }, BpStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { bp_scan_load(path.as_ptr(), &mut loaded) },
        BpStatus::Ok
    );
    let (mut w, mut h, mut n) = (0, 0, 0);
    assert_eq!(
        unsafe { bp_scan_info(loaded, &mut w, &mut h, &mut n) },
        BpStatus::Ok
    );
    assert_eq!(n, scan.valid_count());

    let missing = CString::new(dir.path().join("none.scan").to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { bp_scan_load(missing.as_ptr(), &mut out) },
        BpStatus::Io
    );
    assert!(out.is_null());
    let junk = dir.path().join("junk.scan");
    std::fs::write(&junk, b"not a scan").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { bp_scan_load(junk.as_ptr(), &mut out) },
        BpStatus::Format
    );
    unsafe {
        bp_scan_free(handle);
        bp_scan_free(loaded);
    }
}

#[test]
fn null_and_invalid_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { bp_scan_new(2, 2, ptr::null(), &mut out) },
        BpStatus::NullPointer
    );
    let pts = [0.0f32; 3];
    assert_eq!(
        unsafe { bp_scan_new(0, 1, pts.as_ptr(), &mut out) },
        BpStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { bp_scan_load(ptr::null(), &mut out) },
        BpStatus::NullPointer
    );
    let (mut w, mut h, mut n) = (0, 0, 0);
    assert_eq!(
        unsafe { bp_scan_info(ptr::null(), &mut w, &mut h, &mut n) },
        BpStatus::NullPointer
    );

    let id = bp_pose_identity();
    let mut bad = id;
    bad.rotation[0] = -1.0; // det = -1
    let (mut te, mut re) = (0.0, 0.0);
    assert_eq!(
        unsafe { bp_pose_errors(&id, &bad, &mut te, &mut re) },
        BpStatus::InvalidArgument
    );

    let handle = new_scan(&scene().0);
    let flat_bin = BpBinSpec {
        inner_length: 100.0,
        inner_width: 200.0,
        inner_depth: 50.0,
        wall_thickness: 5.0,
    };
    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { bp_fit_analytic(handle, &flat_bin, &mut report) },
        BpStatus::InvalidArgument
    );
    unsafe {
        bp_scan_free(handle);
        bp_scan_free(ptr::null_mut());
        bp_fit_report_free(ptr::null_mut());
    }
}

#[test]
fn failed_fit_and_missing_pairs_have_status_codes() {
    let nan = [f32::NAN; 3 * 16];
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { bp_scan_new(4, 4, nan.as_ptr(), &mut handle) },
        BpStatus::Ok
    );
    let bin = BpBinSpec {
        inner_length: 300.0,
        inner_width: 200.0,
        inner_depth: 150.0,
        wall_thickness: 6.0,
    };
    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { bp_fit_analytic(handle, &bin, &mut report) },
        BpStatus::Ok
    );
    let mut pose = bp_pose_identity();
    assert_eq!(
        unsafe { bp_fit_report_pose(report, &mut pose) },
        BpStatus::FitFailed
    );

    let mut init = bp_pose_identity();
    init.translation = [0.0, 0.0, 1000.0];
    let mut outcome = BpIcpOutcome {
        pose: init,
        iterations_used: 0,
        final_mean_distance: 0.0,
        paired_points: 0,
        confident: false,
    };
    assert_eq!(
        unsafe { bp_refine_icp(handle, &bin, &init, &mut outcome) },
        BpStatus::NoCorrespondence
    );
    unsafe {
        bp_fit_report_free(report);
        bp_scan_free(handle);
    }
}

#[test]
fn every_status_has_a_message() {
    for s in [
        BpStatus::Ok,
        BpStatus::NullPointer,
        BpStatus::InvalidArgument,
        BpStatus::Io,
        BpStatus::Format,
        BpStatus::FitFailed,
        BpStatus::NoCorrespondence,
        BpStatus::Panic,
    ] {
        let msg = unsafe { CStr::from_ptr(bp_status_message(s)) };
        assert!(!msg.to_bytes().is_empty());
    }
}

#[test]
fn generated_header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/binpose.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "bp_scan_new",
        "bp_scan_load",
        "bp_scan_save",
        "bp_scan_info",
        "bp_scan_free",
        "bp_fit_analytic",
        "bp_fit_report_pose",
        "bp_fit_report_free",
        "bp_refine_icp",
        "bp_pose_errors",
        "bp_status_message",
        "typedef struct BpScan BpScan",
        "BP_STATUS_NO_CORRESPONDENCE = 6",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
        else {
            eprintln!("{compiler} not available, skipping compile check");
            continue;
        };
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
