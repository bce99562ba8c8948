//! C ABI over the binpose library.
//!
//! Scans and fit reports are opaque handles created and freed by this
//! library. Poses cross the boundary by value as a row-major rotation plus a
//! translation in millimeters. Every function returns a [`BpStatus`]; panics
//! are caught and reported as [`BpStatus::Panic`].

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use binpose::analytic::{estimate_pose_analytic, AnalyticParams, FitReport};
use binpose::icp::{refine_icp, IcpError, IcpParams};
use binpose::metrics::pose_errors;
use binpose::scan::{load_scan, save_scan, ScanError};
use binpose::{BinSpec, Pose, StructuredScan};
use nalgebra::{Matrix3, Vector3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    FitFailed = 5,
    NoCorrespondence = 6,
    Panic = 7,
}

/// Cuboid bin, all values in millimeters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpBinSpec {
    pub inner_length: f64,
    pub inner_width: f64,
    pub inner_depth: f64,
    pub wall_thickness: f64,
}

/// Bin-to-scanner transform. `rotation` is row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpPose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// ICP outcome with default parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpIcpOutcome {
    pub pose: BpPose,
    pub iterations_used: usize,
    pub final_mean_distance: f64,
    pub paired_points: usize,
    pub confident: bool,
}

/// Opaque organized scan.
pub struct BpScan(StructuredScan);

/// Opaque result of the analytic fitter.
pub struct BpFitReport(FitReport);

impl BpPose {
    fn from_pose(p: &Pose) -> Self {
        let r = p.rotation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = r[(i, j)];
            }
        }
        let t = p.translation();
        Self {
            rotation,
            translation: [t.x, t.y, t.z],
        }
    }

    fn to_pose(self) -> Result<Pose, BpStatus> {
        let r = Matrix3::from_row_slice(&self.rotation);
        let t = Vector3::from_row_slice(&self.translation);
        Pose::new(r, t).map_err(|_| BpStatus::InvalidArgument)
    }
}

impl BpBinSpec {
    fn to_bin(self) -> Result<BinSpec, BpStatus> {
        BinSpec::new(
            self.inner_length,
            self.inner_width,
            self.inner_depth,
            self.wall_thickness,
        )
        .map_err(|_| BpStatus::InvalidArgument)
    }
}

fn guard(f: impl FnOnce() -> Result<(), BpStatus>) -> BpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => BpStatus::Panic,
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, BpStatus> {
    if path.is_null() {
        return Err(BpStatus::NullPointer);
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| BpStatus::InvalidArgument)?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, BpStatus> {
    p.as_ref().ok_or(BpStatus::NullPointer)
}

fn scan_status(e: ScanError) -> BpStatus {
    match e {
        ScanError::Io(_) => BpStatus::Io,
        ScanError::ZeroDimensions { .. } | ScanError::SizeMismatch { .. } => {
            BpStatus::InvalidArgument
        }
        _ => BpStatus::Format,
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn bp_status_message(status: BpStatus) -> *const c_char {
    let s: &'static CStr = match status {
        BpStatus::Ok => c"ok",
        BpStatus::NullPointer => c"null pointer argument",
        BpStatus::InvalidArgument => c"invalid argument",
        BpStatus::Io => c"i/o error",
        BpStatus::Format => c"malformed file",
        BpStatus::FitFailed => c"fit failed",
        BpStatus::NoCorrespondence => c"no correspondences",
        BpStatus::Panic => c"internal error",
    };
    s.as_ptr()
}

/// Builds a scan from `width * height * 3` floats in row-major pixel order.
/// Pixels holding any NaN are invalid.
///
/// # Safety
/// `points` must point to `width * height * 3` readable floats and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bp_scan_new(
    width: usize,
    height: usize,
    points: *const f32,
    out: *mut *mut BpScan,
) -> BpStatus {
    guard(|| {
        if points.is_null() || out.is_null() {
            return Err(BpStatus::NullPointer);
        }
        let n = width.checked_mul(height).ok_or(BpStatus::InvalidArgument)?;
        let raw =
            std::slice::from_raw_parts(points, n.checked_mul(3).ok_or(BpStatus::InvalidArgument)?);
        let pts = raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let scan = StructuredScan::from_points(width, height, pts).map_err(scan_status)?;
        *out = Box::into_raw(Box::new(BpScan(scan)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_scan_load(path: *const c_char, out: *mut *mut BpScan) -> BpStatus {
    guard(|| {
        if out.is_null() {
            return Err(BpStatus::NullPointer);
        }
        let scan = load_scan(path_arg(path)?).map_err(scan_status)?;
        *out = Box::into_raw(Box::new(BpScan(scan)));
        Ok(())
    })
}

/// # Safety
/// `scan` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bp_scan_save(scan: *const BpScan, path: *const c_char) -> BpStatus {
    guard(|| {
        let scan = deref(scan)?;
        save_scan(&scan.0, path_arg(path)?).map_err(scan_status)
    })
}

/// # Safety
/// `scan` must be null or a live handle; `width`, `height` and
/// `valid_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bp_scan_info(
    scan: *const BpScan,
    width: *mut usize,
    height: *mut usize,
    valid_count: *mut usize,
) -> BpStatus {
    guard(|| {
        let scan = deref(scan)?;
        if width.is_null() || height.is_null() || valid_count.is_null() {
            return Err(BpStatus::NullPointer);
        }
        *width = scan.0.width();
        *height = scan.0.height();
        *valid_count = scan.0.valid_count();
        Ok(())
    })
}

/// # Safety
/// `scan` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn bp_scan_free(scan: *mut BpScan) {
    if !scan.is_null() {
        drop(Box::from_raw(scan));
    }
}

/// Runs the analytic fitter with default parameters. A failed fit is still
/// [`BpStatus::Ok`]; query it with [`bp_fit_report_pose`].
///
/// # Safety
/// `scan` must be live, `bin` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_fit_analytic(
    scan: *const BpScan,
    bin: *const BpBinSpec,
    out: *mut *mut BpFitReport,
) -> BpStatus {
    guard(|| {
        let scan = deref(scan)?;
        let bin = deref(bin)?.to_bin()?;
        if out.is_null() {
            return Err(BpStatus::NullPointer);
        }
        let report = estimate_pose_analytic(&scan.0, &bin, &AnalyticParams::default());
        *out = Box::into_raw(Box::new(BpFitReport(report)));
        Ok(())
    })
}

/// Writes the fitted pose, or returns [`BpStatus::FitFailed`].
///
/// # Safety
/// `report` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_fit_report_pose(
    report: *const BpFitReport,
    out: *mut BpPose,
) -> BpStatus {
    guard(|| {
        let report = deref(report)?;
        if out.is_null() {
            return Err(BpStatus::NullPointer);
        }
        let pose = report.0.pose().ok_or(BpStatus::FitFailed)?;
        *out = BpPose::from_pose(pose);
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn bp_fit_report_free(report: *mut BpFitReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// ICP refinement with default parameters. On
/// [`BpStatus::NoCorrespondence`] the caller should keep its initial pose.
///
/// # Safety
/// `scan` must be live, `bin` and `initial` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_refine_icp(
    scan: *const BpScan,
    bin: *const BpBinSpec,
    initial: *const BpPose,
    out: *mut BpIcpOutcome,
) -> BpStatus {
    guard(|| {
        let scan = deref(scan)?;
        let bin = deref(bin)?.to_bin()?;
        let initial = deref(initial)?.to_pose()?;
        if out.is_null() {
            return Err(BpStatus::NullPointer);
        }
        let res =
            refine_icp(&scan.0, &initial, &bin, &IcpParams::default()).map_err(|e| match e {
                IcpError::NoCorrespondence(_) | IcpError::NoVisibleModel => {
                    BpStatus::NoCorrespondence
                }
                _ => BpStatus::InvalidArgument,
            })?;
        *out = BpIcpOutcome {
            pose: BpPose::from_pose(&res.pose),
            iterations_used: res.iterations_used,
            final_mean_distance: res.final_mean_distance,
            paired_points: res.paired_points,
            confident: res.confident,
        };
        Ok(())
    })
}

/// Translation error (mm) and symmetry-aware rotation error (rad).
///
/// # Safety
/// `gt` and `est` must be readable, `e_te` and `e_re` writable.
#[no_mangle]
pub unsafe extern "C" fn bp_pose_errors(
    gt: *const BpPose,
    est: *const BpPose,
    e_te: *mut f64,
    e_re: *mut f64,
) -> BpStatus {
    guard(|| {
        let gt = deref(gt)?.to_pose()?;
        let est = deref(est)?.to_pose()?;
        if e_te.is_null() || e_re.is_null() {
            return Err(BpStatus::NullPointer);
        }
        let (te, re) = pose_errors(&gt, &est);
        *e_te = te;
        *e_re = re;
        Ok(())
    })
}

/// Identity pose, handy for initializing output values.
#[no_mangle]
pub extern "C" fn bp_pose_identity() -> BpPose {
    BpPose::from_pose(&Pose::identity())
}
