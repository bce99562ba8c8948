//! Edge-based analytic bin pose estimation.
//!
//! Four stages: bin-cuts along sampled rows and columns, the top (rim)
//! plane from the modal cut directions, rim corners from the turning angle
//! of the ordered wall-top endpoints, and per-wall line fits giving the rim
//! rectangle and the pose.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use thiserror::Error;

use crate::bin_spec::BinSpec;
use crate::kv::{KvError, KvMap, KvWriter};
use crate::pose::Pose;
use crate::rotparam::canonicalize_symmetry;
use crate::scan::StructuredScan;

/// Mode directions closer than this are treated as parallel.
pub const MIN_MODE_SEPARATION_DEG: f64 = 5.0;
/// Corners need a turning angle of at least this much.
const MIN_CORNER_TURN_DEG: f64 = 30.0;
/// Neighbor offset used for turning angles along the rim.
const TURN_NEIGHBOR: usize = 2;
/// Non-maximum suppression half-window along the rim.
const CORNER_NMS: usize = 2;
/// Depth slope along a chord across a rim strip below which its nearest
/// end is ambiguous.
const EDGE_SLOPE_EPS: f64 = 1e-3;
/// Chords running closer than this (cosine) to along the wall are left as is.
const EDGE_CHORD_MIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticParams {
    pub scanline_stride: usize,
    /// mm
    pub depth_jump_threshold: f64,
    /// degrees
    pub direction_bin_width: f64,
    /// mm
    pub plane_inlier_threshold: f64,
    pub min_wall_cuts_per_wall: usize,
    /// Allowed relative deviation of the fitted rim rectangle from the bin
    /// centerline dimensions.
    pub max_size_deviation: f64,
}

impl Default for AnalyticParams {
    fn default() -> Self {
        Self {
            scanline_stride: 16,
            depth_jump_threshold: 10.0,
            direction_bin_width: 5.0,
            plane_inlier_threshold: 8.0,
            min_wall_cuts_per_wall: 3,
            max_size_deviation: 0.25,
        }
    }
}

const ANALYTIC_KEYS: &[&str] = &[
    "scanline_stride",
    "depth_jump_threshold",
    "direction_bin_width",
    "plane_inlier_threshold",
    "min_wall_cuts_per_wall",
    "max_size_deviation",
];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid analytic parameter {0}: must be strictly positive")]
pub struct ParamsError(pub &'static str);

impl AnalyticParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let checks = [
            ("scanline_stride", self.scanline_stride as f64),
            ("depth_jump_threshold", self.depth_jump_threshold),
            ("direction_bin_width", self.direction_bin_width),
            ("plane_inlier_threshold", self.plane_inlier_threshold),
            ("min_wall_cuts_per_wall", self.min_wall_cuts_per_wall as f64),
            ("max_size_deviation", self.max_size_deviation),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ParamsError(name));
            }
        }
        Ok(())
    }

    /// Overrides defaults with `analytic.*` keys.
    pub fn from_kv(m: &KvMap) -> Result<Self, KvError> {
        m.check_known("analytic.", ANALYTIC_KEYS)?;
        let d = Self::default();
        Ok(Self {
            scanline_stride: m
                .get("analytic.scanline_stride")?
                .unwrap_or(d.scanline_stride),
            depth_jump_threshold: m
                .get("analytic.depth_jump_threshold")?
                .unwrap_or(d.depth_jump_threshold),
            direction_bin_width: m
                .get("analytic.direction_bin_width")?
                .unwrap_or(d.direction_bin_width),
            plane_inlier_threshold: m
                .get("analytic.plane_inlier_threshold")?
                .unwrap_or(d.plane_inlier_threshold),
            min_wall_cuts_per_wall: m
                .get("analytic.min_wall_cuts_per_wall")?
                .unwrap_or(d.min_wall_cuts_per_wall),
            max_size_deviation: m
                .get("analytic.max_size_deviation")?
                .unwrap_or(d.max_size_deviation),
        })
    }

    pub fn write_kv(&self, w: &mut KvWriter) {
        w.put("analytic.scanline_stride", self.scanline_stride)
            .put("analytic.depth_jump_threshold", self.depth_jump_threshold)
            .put("analytic.direction_bin_width", self.direction_bin_width)
            .put(
                "analytic.plane_inlier_threshold",
                self.plane_inlier_threshold,
            )
            .put(
                "analytic.min_wall_cuts_per_wall",
                self.min_wall_cuts_per_wall,
            )
            .put("analytic.max_size_deviation", self.max_size_deviation);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CutAxis {
    /// Along an image row.
    Horizontal,
    /// Along an image column.
    Vertical,
}

/// Part of a bin-cut lying on one wall.
#[derive(Debug, Clone, PartialEq)]
pub struct WallCut {
    /// First and last pixel position along the scan-line.
    pub first: usize,
    pub last: usize,
    /// Flat scan index of the minimum-depth sample.
    pub top_pixel: usize,
    /// Minimum-depth point (mm, scanner space).
    pub top: Vector3<f64>,
    /// Valid samples just before and after `top` along the scan-line.
    pub neighbors: [Option<Vector3<f64>>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinCut {
    pub axis: CutAxis,
    pub scanline_index: usize,
    pub wall_cuts: [WallCut; 2],
    /// Pixel positions strictly between the two wall-cuts.
    pub floor_interval: (usize, usize),
    /// From the first wall top to the second (left→right, top→bottom).
    pub edge_direction: Vector3<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("no bin-cuts found")]
    NoCuts,
    #[error("no {0:?} bin-cuts")]
    MissingAxis(CutAxis),
    #[error("mode directions are nearly parallel ({0:.2} deg)")]
    DegeneratePlane(f64),
    #[error("corner detection failed: {0}")]
    CornerDetection(String),
    #[error("wall {wall} has {support} supporting endpoints")]
    WallSupport { wall: usize, support: usize },
    #[error("fitted rim is {found_long:.1} x {found_short:.1} mm, expected about {expected_long:.1} x {expected_short:.1} mm")]
    SizeMismatch {
        found_long: f64,
        found_short: f64,
        expected_long: f64,
        expected_short: f64,
    },
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Plane `normal · p = offset` with `normal` oriented toward the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl TopPlane {
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// In-plane orthonormal basis `(e1, e2)` with `e1 × e2 = normal`.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal;
        let helper = if n.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = (helper - n * n.dot(&helper)).normalize();
        let e2 = n.cross(&e1);
        (e1, e2)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let (e1, e2) = self.basis();
        Vector2::new(e1.dot(p), e2.dot(p))
    }

    pub fn lift(&self, q: &Vector2<f64>) -> Vector3<f64> {
        let (e1, e2) = self.basis();
        self.normal * self.offset + e1 * q.x + e2 * q.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    CutExtraction,
    TopPlane,
    CornerDetection,
    WallFit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::CutExtraction => "cut-extraction",
            Stage::TopPlane => "top-plane",
            Stage::CornerDetection => "corner-detection",
            Stage::WallFit => "wall-fit",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    pub cuts_extracted: usize,
    pub horizontal_cuts: usize,
    pub vertical_cuts: usize,
    /// Cuts kept after plane filtering.
    pub plane_inliers: usize,
    pub corners_found: usize,
    pub wall_support: [usize; 4],
    /// RMS line residual per wall (mm).
    pub wall_residuals: [f64; 4],
    pub failed_stage: Option<Stage>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pose: Option<Pose>,
    pub diagnostics: FitDiagnostics,
}

impl FitReport {
    fn success(pose: Pose, diagnostics: FitDiagnostics) -> Self {
        Self {
            pose: Some(pose),
            diagnostics,
        }
    }

    fn failure(stage: Stage, err: &AnalyticError, mut diagnostics: FitDiagnostics) -> Self {
        diagnostics.failed_stage = Some(stage);
        diagnostics.message = Some(err.to_string());
        Self {
            pose: None,
            diagnostics,
        }
    }

    pub fn pose(&self) -> Option<&Pose> {
        self.pose.as_ref()
    }

    pub fn failed(&self) -> bool {
        self.pose.is_none()
    }
}

// ---------------------------------------------------------------------------
// bin-cuts

struct Sample {
    pos: usize,
    pixel: usize,
    point: Vector3<f64>,
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// True when, walking away from `k` in `dir`, the depth rises by at least
/// `prominence` before any sample nearer than `s[k]` shows up.
fn rises_by(s: &[f64], k: usize, prominence: f64, forward: bool) -> bool {
    let base = s[k];
    let mut j = k;
    loop {
        if forward {
            j += 1;
            if j >= s.len() {
                return false;
            }
        } else {
            if j == 0 {
                return false;
            }
            j -= 1;
        }
        if s[j] < base {
            return false;
        }
        if s[j] >= base + prominence {
            return true;
        }
    }
}

fn wall_extent(s: &[f64], k: usize, params: &AnalyticParams) -> (usize, usize) {
    let limit = s[k] + params.depth_jump_threshold / 2.0;
    let mut lo = k;
    while lo > 0 && s[lo - 1] < limit && (s[lo - 1] - s[lo]).abs() < params.depth_jump_threshold {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < s.len()
        && s[hi + 1] < limit
        && (s[hi + 1] - s[hi]).abs() < params.depth_jump_threshold
    {
        hi += 1;
    }
    (lo, hi)
}

fn cut_from_samples(
    samples: &[Sample],
    axis: CutAxis,
    line: usize,
    params: &AnalyticParams,
) -> Option<BinCut> {
    let n = samples.len();
    if n < 3 {
        return None;
    }
    let raw: Vec<f64> = samples.iter().map(|s| s.point.z).collect();
    let mut s = raw.clone();
    for k in 1..n - 1 {
        s[k] = median3(raw[k - 1], raw[k], raw[k + 1]);
    }
    let p = params.depth_jump_threshold;
    let prominent = |k: usize| {
        let left_ok = k == 0 || s[k] < s[k - 1];
        let right_ok = k + 1 == n || s[k] <= s[k + 1];
        left_ok && right_ok && rises_by(&s, k, p, false) && rises_by(&s, k, p, true)
    };
    let w1 = (0..n).find(|&k| prominent(k))?;
    let w2 = (w1 + 1..n).rev().find(|&k| prominent(k))?;
    let floor_depth = s[w1 + 1..w2]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if floor_depth < s[w1].max(s[w2]) + p {
        return None;
    }
    let (a_lo, a_hi) = wall_extent(&s, w1, params);
    let (b_lo, b_hi) = wall_extent(&s, w2, params);
    if a_hi + 1 >= b_lo {
        return None;
    }
    let wall = |lo: usize, hi: usize| {
        let k = (lo..=hi)
            .min_by(|&a, &b| raw[a].total_cmp(&raw[b]))
            .expect("non-empty interval");
        WallCut {
            first: samples[lo].pos,
            last: samples[hi].pos,
            top_pixel: samples[k].pixel,
            top: samples[k].point,
            neighbors: [
                k.checked_sub(1).map(|j| samples[j].point),
                samples.get(k + 1).map(|s| s.point),
            ],
        }
    };
    let first = wall(a_lo, a_hi);
    let second = wall(b_lo, b_hi);
    let floor_interval = (samples[a_hi + 1].pos, samples[b_lo - 1].pos);
    let edge_direction = second.top - first.top;
    Some(BinCut {
        axis,
        scanline_index: line,
        wall_cuts: [first, second],
        floor_interval,
        edge_direction,
    })
}

/// Bin-cuts along rows and columns sampled every `scanline_stride` pixels
/// (starting half a stride in). A line yields a cut when its depth profile
/// has a near wall top, a farther floor and another near wall top; wall
/// tops are depth minima that stand out by at least
/// `depth_jump_threshold` on both sides.
pub fn extract_bin_cuts(scan: &StructuredScan, params: &AnalyticParams) -> Vec<BinCut> {
    let stride = params.scanline_stride.max(1);
    let (w, h) = (scan.width(), scan.height());
    let mut cuts = Vec::new();
    let collect = |pixels: &mut dyn Iterator<Item = (usize, usize)>| -> Vec<Sample> {
        pixels
            .filter_map(|(pos, idx)| {
                scan.point(idx).map(|point| Sample {
                    pos,
                    pixel: idx,
                    point,
                })
            })
            .collect()
    };
    for row in (stride / 2..h).step_by(stride) {
        let samples = collect(&mut (0..w).map(|c| (c, scan.index(c, row))));
        cuts.extend(cut_from_samples(&samples, CutAxis::Horizontal, row, params));
    }
    for col in (stride / 2..w).step_by(stride) {
        let samples = collect(&mut (0..h).map(|r| (r, scan.index(col, r))));
        cuts.extend(cut_from_samples(&samples, CutAxis::Vertical, col, params));
    }
    cuts
}

// ---------------------------------------------------------------------------
// top plane

/// Mean unit direction of the most populated (azimuth, elevation) bin.
fn mode_direction(dirs: &[Vector3<f64>], bin_width_deg: f64) -> Option<Vector3<f64>> {
    let width = bin_width_deg.to_radians();
    let mut bins: BTreeMap<(i64, i64), (usize, Vector3<f64>)> = BTreeMap::new();
    for d in dirs {
        let norm = d.norm();
        if !(norm > 0.0) {
            continue;
        }
        let u = d / norm;
        let az = u.y.atan2(u.x);
        let el = u.z.clamp(-1.0, 1.0).asin();
        let key = ((az / width).floor() as i64, (el / width).floor() as i64);
        let e = bins.entry(key).or_insert((0, Vector3::zeros()));
        e.0 += 1;
        e.1 += u;
    }
    // ties go to the lowest key
    let mut best: Option<(usize, Vector3<f64>)> = None;
    for (count, sum) in bins.values() {
        if best.is_none_or(|b| *count > b.0) {
            best = Some((*count, *sum));
        }
    }
    best.map(|(_, sum)| sum.normalize())
}

/// Rim plane from the modal horizontal and vertical cut directions. Cuts
/// with a wall top farther than `plane_inlier_threshold` from the plane are
/// dropped.
pub fn estimate_top_plane(
    cuts: &[BinCut],
    params: &AnalyticParams,
) -> Result<(TopPlane, Vec<BinCut>), AnalyticError> {
    let dirs = |axis| -> Vec<Vector3<f64>> {
        cuts.iter()
            .filter(|c| c.axis == axis)
            .map(|c| c.edge_direction)
            .collect()
    };
    let mode_h = mode_direction(&dirs(CutAxis::Horizontal), params.direction_bin_width)
        .ok_or(AnalyticError::MissingAxis(CutAxis::Horizontal))?;
    let mode_v = mode_direction(&dirs(CutAxis::Vertical), params.direction_bin_width)
        .ok_or(AnalyticError::MissingAxis(CutAxis::Vertical))?;
    let angle = mode_h.angle(&mode_v).to_degrees();
    let separation = angle.min(180.0 - angle);
    if separation < MIN_MODE_SEPARATION_DEG {
        return Err(AnalyticError::DegeneratePlane(separation));
    }
    let mut normal = mode_h.cross(&mode_v).normalize();
    if normal.z > 0.0 {
        normal = -normal;
    }
    let mut projections: Vec<f64> = cuts
        .iter()
        .flat_map(|c| c.wall_cuts.iter().map(|w| normal.dot(&w.top)))
        .collect();
    projections.sort_by(f64::total_cmp);
    let offset = median_sorted(&projections);
    let plane = TopPlane { normal, offset };
    let kept = cuts
        .iter()
        .filter(|c| {
            c.wall_cuts
                .iter()
                .all(|w| plane.distance(&w.top).abs() <= params.plane_inlier_threshold)
        })
        .cloned()
        .collect();
    Ok((plane, kept))
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------------------
// corners

/// Wall-top endpoints projected into the plane and sorted by polar angle
/// around their centroid (counterclockwise seen from the camera).
fn rim_traversal(cuts: &[BinCut], plane: &TopPlane) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = cuts
        .iter()
        .flat_map(|c| c.wall_cuts.iter().map(|w| plane.project(&w.top)))
        .collect();
    if pts.is_empty() {
        return pts;
    }
    let centroid = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    pts.sort_by(|a, b| {
        let ta = (a.y - centroid.y).atan2(a.x - centroid.x);
        let tb = (b.y - centroid.y).atan2(b.x - centroid.x);
        ta.total_cmp(&tb)
    });
    pts
}

fn turning_angles(pts: &[Vector2<f64>], k: usize) -> Vec<f64> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let prev = pts[(i + n - k) % n];
            let next = pts[(i + k) % n];
            let a = pts[i] - prev;
            let b = next - pts[i];
            let cross = a.x * b.y - a.y * b.x;
            cross.atan2(a.dot(&b)).abs()
        })
        .collect()
}

/// Indices (into `pts`) of the four rim corners, in traversal order.
fn corner_indices(pts: &[Vector2<f64>], min_endpoints: usize) -> Result<[usize; 4], AnalyticError> {
    let n = pts.len();
    if n < min_endpoints.max(2 * CORNER_NMS + 1) * 4 / 2 || n < 8 {
        return Err(AnalyticError::CornerDetection(format!(
            "only {n} rim endpoints"
        )));
    }
    let turn = turning_angles(pts, TURN_NEIGHBOR);
    let mut sorted = turn.clone();
    sorted.sort_by(f64::total_cmp);
    let median = median_sorted(&sorted);
    let threshold = MIN_CORNER_TURN_DEG.to_radians().max(2.0 * median);
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            turn[i] >= threshold
                && (1..=CORNER_NMS).all(|d| {
                    let before = turn[(i + n - d) % n];
                    let after = turn[(i + d) % n];
                    // strict on one side so plateaus keep a single peak
                    turn[i] > before && turn[i] >= after
                })
        })
        .collect();
    if peaks.len() < 4 {
        return Err(AnalyticError::CornerDetection(format!(
            "{} dominant turning points",
            peaks.len()
        )));
    }
    peaks.sort_by(|&a, &b| turn[b].total_cmp(&turn[a]).then(a.cmp(&b)));
    let mut four = [peaks[0], peaks[1], peaks[2], peaks[3]];
    four.sort_unstable();
    for i in 0..4 {
        let gap = (four[(i + 1) % 4] + n - four[i]) % n;
        if gap < CORNER_NMS + 1 {
            return Err(AnalyticError::CornerDetection("corners too close".into()));
        }
    }
    Ok(four)
}

/// The four rim corners (mm, scanner space), counterclockwise as seen from
/// the camera.
pub fn detect_corners(
    cuts: &[BinCut],
    plane: &TopPlane,
    params: &AnalyticParams,
) -> Result<[Vector3<f64>; 4], AnalyticError> {
    let pts = rim_traversal(cuts, plane);
    let idx = corner_indices(&pts, params.min_wall_cuts_per_wall)?;
    Ok(idx.map(|i| plane.lift(&pts[i])))
}

// ---------------------------------------------------------------------------
// walls and pose

struct Line2 {
    point: Vector2<f64>,
    dir: Vector2<f64>,
}

impl Line2 {
    fn residual(&self, p: &Vector2<f64>) -> f64 {
        let d = p - self.point;
        (d.x * self.dir.y - d.y * self.dir.x).abs()
    }

    fn intersect(&self, other: &Line2) -> Option<Vector2<f64>> {
        let m = Matrix2::new(self.dir.x, -other.dir.x, self.dir.y, -other.dir.y);
        let st = m.try_inverse()? * (other.point - self.point);
        Some(self.point + self.dir * st.x)
    }
}

/// Rectangle corners; corner `k` lies between walls `k - 1` and `k`.
fn rectangle(lines: &[Line2]) -> Result<[Vector2<f64>; 4], AnalyticError> {
    let mut rect = [Vector2::zeros(); 4];
    for k in 0..4 {
        rect[k] = lines[(k + 3) % 4]
            .intersect(&lines[k])
            .ok_or_else(|| AnalyticError::CornerDetection("parallel adjacent walls".into()))?;
    }
    Ok(rect)
}

/// Total least squares line through the points.
fn fit_line(pts: &[Vector2<f64>]) -> Option<Line2> {
    if pts.len() < 2 {
        return None;
    }
    let c = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    let mut cov = Matrix2::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let i = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        0
    } else {
        1
    };
    let dir = eig.eigenvectors.column(i).into_owned();
    Some(Line2 { point: c, dir })
}

/// Sub-sample estimate of where the scan-line leaves the rim top on the
/// near side: halfway between the wall top and the point where the ray of
/// its nearer neighbor meets the plane. Rays start at the scanner origin.
fn rim_edge_point(wc: &WallCut, plane: &TopPlane) -> Vector3<f64> {
    let on_plane = |p: &Vector3<f64>| {
        let denom = plane.normal.dot(p);
        (denom.abs() > f64::EPSILON).then(|| p * (plane.offset / denom))
    };
    let top = on_plane(&wc.top).unwrap_or(wc.top);
    wc.neighbors
        .iter()
        .flatten()
        .filter_map(on_plane)
        .filter(|q| q.z < top.z)
        .min_by(|a, b| a.z.total_cmp(&b.z))
        .map_or(top, |q| (top + q) / 2.0)
}

fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Assigns wall tops to the nearest corner-to-corner segment, fits one line
/// per wall and derives the pose from the resulting rectangle.
pub fn fit_walls_and_pose(
    cuts: &[BinCut],
    corners: &[Vector3<f64>; 4],
    plane: &TopPlane,
    bin: &BinSpec,
    params: &AnalyticParams,
) -> FitReport {
    let mut diag = FitDiagnostics {
        plane_inliers: cuts.len(),
        corners_found: 4,
        ..FitDiagnostics::default()
    };
    match fit_walls_inner(cuts, corners, plane, bin, params, &mut diag) {
        Ok(pose) => FitReport::success(pose, diag),
        Err(e) => FitReport::failure(Stage::WallFit, &e, diag),
    }
}

fn fit_walls_inner(
    cuts: &[BinCut],
    corners: &[Vector3<f64>; 4],
    plane: &TopPlane,
    bin: &BinSpec,
    params: &AnalyticParams,
    diag: &mut FitDiagnostics,
) -> Result<Pose, AnalyticError> {
    let c2: Vec<Vector2<f64>> = corners.iter().map(|c| plane.project(c)).collect();
    let corner_center = c2.iter().sum::<Vector2<f64>>() / 4.0;
    let outward: Vec<Vector2<f64>> = (0..4)
        .map(|j| {
            let d = c2[(j + 1) % 4] - c2[j];
            let m = Vector2::new(d.y, -d.x).normalize();
            if m.dot(&(c2[j] - corner_center)) < 0.0 {
                -m
            } else {
                m
            }
        })
        .collect();
    let (e1, e2) = plane.basis();
    let depth_slope = Vector2::new(e1.z, e2.z);
    let half_wall = bin.wall_thickness() / 2.0;
    let mut groups: [Vec<Vector2<f64>>; 4] = Default::default();
    for cut in cuts {
        let chord = plane.project(&cut.edge_direction);
        let chord = if chord.norm() > 0.0 {
            chord.normalize()
        } else {
            chord
        };
        for wc in &cut.wall_cuts {
            let q = plane.project(&rim_edge_point(wc, plane));
            let (j, _) = (0..4)
                .map(|j| (j, segment_distance(&q, &c2[j], &c2[(j + 1) % 4])))
                .fold(
                    (0, f64::INFINITY),
                    |acc, x| if x.1 < acc.1 { x } else { acc },
                );
            // The nearest sample along the scan-line sits on the inner or the
            // outer edge of the rim strip, whichever end of the chord across
            // the strip is closer to the camera. Move it to the centerline.
            let m = outward[j];
            let across = if chord.dot(&m) >= 0.0 { chord } else { -chord };
            let q = if across.dot(&m) < EDGE_CHORD_MIN {
                q
            } else {
                let slope = across.dot(&depth_slope);
                if slope < -EDGE_SLOPE_EPS {
                    q - m * half_wall
                } else if slope > EDGE_SLOPE_EPS {
                    q + m * half_wall
                } else {
                    q
                }
            };
            groups[j].push(q);
        }
    }
    let mut lines = Vec::with_capacity(4);
    for (j, pts) in groups.iter().enumerate() {
        let first = fit_line(pts);
        let inliers: Vec<Vector2<f64>> = match &first {
            Some(l) => pts
                .iter()
                .filter(|p| l.residual(p) <= params.plane_inlier_threshold)
                .cloned()
                .collect(),
            None => Vec::new(),
        };
        diag.wall_support[j] = inliers.len();
        if inliers.len() < params.min_wall_cuts_per_wall.max(2) {
            return Err(AnalyticError::WallSupport {
                wall: j,
                support: inliers.len(),
            });
        }
        let line = fit_line(&inliers).expect("at least two points");
        let rms = (inliers
            .iter()
            .map(|p| line.residual(p).powi(2))
            .sum::<f64>()
            / inliers.len() as f64)
            .sqrt();
        diag.wall_residuals[j] = rms;
        lines.push(line);
    }
    let rect = rectangle(&lines)?;
    let side = |k: usize| rect[(k + 1) % 4] - rect[k];
    let len_a = (side(0).norm() + side(2).norm()) / 2.0;
    let len_b = (side(1).norm() + side(3).norm()) / 2.0;
    let (long_dir, long, short) = if len_a >= len_b {
        (side(0) - side(2), len_a, len_b)
    } else {
        (side(1) - side(3), len_b, len_a)
    };
    let w = bin.wall_thickness();
    let expected_long = bin.inner_length() + w;
    let expected_short = bin.inner_width() + w;
    let tol = params.max_size_deviation;
    if (long - expected_long).abs() > tol * expected_long
        || (short - expected_short).abs() > tol * expected_short
    {
        return Err(AnalyticError::SizeMismatch {
            found_long: long,
            found_short: short,
            expected_long,
            expected_short,
        });
    }
    let center = rect.iter().sum::<Vector2<f64>>() / 4.0;
    let z = plane.normal;
    let x = (e1 * long_dir.x + e2 * long_dir.y).normalize();
    let x = (x - z * z.dot(&x)).normalize();
    let y = z.cross(&x);
    let rotation = canonicalize_symmetry(&Matrix3::from_columns(&[x, y, z]));
    let translation = plane.lift(&center) - z * (bin.inner_depth() / 2.0);
    Ok(Pose::new(rotation, translation).expect("orthonormal frame from cross products"))
}

/// Runs all four stages; failures are folded into the report.
pub fn estimate_pose_analytic(
    scan: &StructuredScan,
    bin: &BinSpec,
    params: &AnalyticParams,
) -> FitReport {
    let mut diag = FitDiagnostics::default();
    if let Err(e) = params.validate() {
        return FitReport::failure(Stage::CutExtraction, &e.into(), diag);
    }
    let cuts = extract_bin_cuts(scan, params);
    diag.cuts_extracted = cuts.len();
    diag.horizontal_cuts = cuts
        .iter()
        .filter(|c| c.axis == CutAxis::Horizontal)
        .count();
    diag.vertical_cuts = cuts.len() - diag.horizontal_cuts;
    if cuts.is_empty() {
        return FitReport::failure(Stage::CutExtraction, &AnalyticError::NoCuts, diag);
    }
    let (plane, kept) = match estimate_top_plane(&cuts, params) {
        Ok(v) => v,
        Err(e) => return FitReport::failure(Stage::TopPlane, &e, diag),
    };
    diag.plane_inliers = kept.len();
    let corners = match detect_corners(&kept, &plane, params) {
        Ok(c) => c,
        Err(e) => return FitReport::failure(Stage::CornerDetection, &e, diag),
    };
    diag.corners_found = 4;
    match fit_walls_inner(&kept, &corners, &plane, bin, params, &mut diag) {
        Ok(pose) => FitReport::success(pose, diag),
        Err(e) => FitReport::failure(Stage::WallFit, &e, diag),
    }
}
