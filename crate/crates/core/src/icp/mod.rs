//! Point-to-point ICP refinement against a sampled bin model.
//!
//! The model is the set of bin surfaces a single camera can see: outer
//! walls and floor, the rim strips and the cavity faces. Points facing away
//! from the camera or hidden behind the bin itself at the initial pose are
//! dropped once, so every iteration works on the same model set. Each
//! iteration pairs the transformed model points with their nearest scan
//! points, drops pairs beyond the rejection radius and solves the rigid
//! alignment in closed form.
//!
//! The tracked cost is the truncated RMS distance
//! `sqrt(mean(min(d², r²)))` over the fixed model set, where `d` is the
//! nearest-neighbor distance and `r` the rejection radius. The alternation
//! of nearest-neighbor pairing and closed-form alignment can only lower it.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix3, Rotation3, Vector3};
use thiserror::Error;

use crate::bin_spec::BinSpec;
use crate::kv::{KvError, KvMap, KvWriter};
use crate::pose::Pose;
use crate::rotparam::canonicalize_symmetry;
use crate::scan::StructuredScan;

/// Cosine between a face normal and the view ray below which the face
/// counts as not visible.
const MIN_VIEW_COSINE: f64 = 0.2;
/// Largest multiple of an ICP step tried by the line search.
const MAX_STEP_SCALE: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// mm
    pub convergence_delta: f64,
    /// mm
    pub rejection_radius: f64,
    /// mm
    pub model_sample_spacing: f64,
    pub min_paired_points: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_delta: 0.01,
            rejection_radius: 25.0,
            model_sample_spacing: 5.0,
            min_paired_points: 500,
        }
    }
}

const ICP_KEYS: &[&str] = &[
    "max_iterations",
    "convergence_delta",
    "rejection_radius",
    "model_sample_spacing",
    "min_paired_points",
];

impl IcpParams {
    pub fn validate(&self) -> Result<(), IcpError> {
        let checks = [
            ("max_iterations", self.max_iterations as f64),
            ("convergence_delta", self.convergence_delta),
            ("rejection_radius", self.rejection_radius),
            ("model_sample_spacing", self.model_sample_spacing),
            ("min_paired_points", self.min_paired_points as f64),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IcpError::Params(name));
            }
        }
        Ok(())
    }

    /// Overrides defaults with `icp.*` keys.
    pub fn from_kv(m: &KvMap) -> Result<Self, KvError> {
        m.check_known("icp.", ICP_KEYS)?;
        let d = Self::default();
        Ok(Self {
            max_iterations: m.get("icp.max_iterations")?.unwrap_or(d.max_iterations),
            convergence_delta: m
                .get("icp.convergence_delta")?
                .unwrap_or(d.convergence_delta),
            rejection_radius: m.get("icp.rejection_radius")?.unwrap_or(d.rejection_radius),
            model_sample_spacing: m
                .get("icp.model_sample_spacing")?
                .unwrap_or(d.model_sample_spacing),
            min_paired_points: m
                .get("icp.min_paired_points")?
                .unwrap_or(d.min_paired_points),
        })
    }

    pub fn write_kv(&self, w: &mut KvWriter) {
        w.put("icp.max_iterations", self.max_iterations)
            .put("icp.convergence_delta", self.convergence_delta)
            .put("icp.rejection_radius", self.rejection_radius)
            .put("icp.model_sample_spacing", self.model_sample_spacing)
            .put("icp.min_paired_points", self.min_paired_points);
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcpError {
    #[error("invalid ICP parameter {0}")]
    Params(&'static str),
    #[error("sample spacing {spacing} mm exceeds the smallest bin dimension {smallest} mm")]
    DegenerateSampling { spacing: f64, smallest: f64 },
    #[error("no correspondences within the rejection radius at iteration {0}")]
    NoCorrespondence(usize),
    #[error("no visible model points at the initial pose")]
    NoVisibleModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    pub iterations_used: usize,
    /// Truncated RMS distance at the returned pose (mm).
    pub final_mean_distance: f64,
    pub paired_points: usize,
    pub confident: bool,
    /// Cost before the first iteration followed by the cost after each one.
    pub cost_history: Vec<f64>,
}

/// Bin surface sample with its outward normal, in bin space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelPoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSurfaces {
    /// Outer walls, outer floor and rim strips.
    Exterior,
    /// Exterior plus the cavity walls and the inner floor.
    All,
}

fn sample_rect(
    out: &mut Vec<ModelPoint>,
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    normal: Vector3<f64>,
    spacing: f64,
) {
    let nu = (u.norm() / spacing).round() as usize + 1;
    let nv = (v.norm() / spacing).round() as usize + 1;
    for i in 0..nu {
        let a = if nu > 1 {
            i as f64 / (nu - 1) as f64
        } else {
            0.5
        };
        for j in 0..nv {
            let b = if nv > 1 {
                j as f64 / (nv - 1) as f64
            } else {
                0.5
            };
            out.push(ModelPoint {
                position: origin + u * a + v * b,
                normal,
            });
        }
    }
}

/// Regular grid samples over the bin surfaces.
pub fn sample_bin_model(
    bin: &BinSpec,
    spacing: f64,
    surfaces: ModelSurfaces,
) -> Result<Vec<ModelPoint>, IcpError> {
    let smallest = bin.smallest_dimension();
    if !(spacing > 0.0) || spacing > smallest {
        return Err(IcpError::DegenerateSampling { spacing, smallest });
    }
    let h = bin.half_inner();
    let w = bin.wall_thickness();
    let (ox, oy, top, bottom) = (h.x + w, h.y + w, h.z, -h.z - w);
    let v3 = Vector3::new;
    let height = v3(0.0, 0.0, top - bottom);
    let mut out = Vec::new();
    // outer walls
    sample_rect(
        &mut out,
        v3(ox, -oy, bottom),
        v3(0.0, 2.0 * oy, 0.0),
        height,
        Vector3::x(),
        spacing,
    );
    sample_rect(
        &mut out,
        v3(-ox, -oy, bottom),
        v3(0.0, 2.0 * oy, 0.0),
        height,
        -Vector3::x(),
        spacing,
    );
    sample_rect(
        &mut out,
        v3(-ox, oy, bottom),
        v3(2.0 * ox, 0.0, 0.0),
        height,
        Vector3::y(),
        spacing,
    );
    sample_rect(
        &mut out,
        v3(-ox, -oy, bottom),
        v3(2.0 * ox, 0.0, 0.0),
        height,
        -Vector3::y(),
        spacing,
    );
    // outer floor
    sample_rect(
        &mut out,
        v3(-ox, -oy, bottom),
        v3(2.0 * ox, 0.0, 0.0),
        v3(0.0, 2.0 * oy, 0.0),
        -Vector3::z(),
        spacing,
    );
    // rim strips
    sample_rect(
        &mut out,
        v3(h.x, -oy, top),
        v3(w, 0.0, 0.0),
        v3(0.0, 2.0 * oy, 0.0),
        Vector3::z(),
        spacing,
    );
    sample_rect(
        &mut out,
        v3(-ox, -oy, top),
        v3(w, 0.0, 0.0),
        v3(0.0, 2.0 * oy, 0.0),
        Vector3::z(),
        spacing,
    );
    sample_rect(
        &mut out,
        v3(-h.x, h.y, top),
        v3(2.0 * h.x, 0.0, 0.0),
        v3(0.0, w, 0.0),
        Vector3::z(),
        spacing,
    );
    sample_rect(
        &mut out,
        v3(-h.x, -oy, top),
        v3(2.0 * h.x, 0.0, 0.0),
        v3(0.0, w, 0.0),
        Vector3::z(),
        spacing,
    );
    if surfaces == ModelSurfaces::All {
        let inner_height = v3(0.0, 0.0, 2.0 * h.z);
        sample_rect(
            &mut out,
            v3(h.x, -h.y, -h.z),
            v3(0.0, 2.0 * h.y, 0.0),
            inner_height,
            -Vector3::x(),
            spacing,
        );
        sample_rect(
            &mut out,
            v3(-h.x, -h.y, -h.z),
            v3(0.0, 2.0 * h.y, 0.0),
            inner_height,
            Vector3::x(),
            spacing,
        );
        sample_rect(
            &mut out,
            v3(-h.x, h.y, -h.z),
            v3(2.0 * h.x, 0.0, 0.0),
            inner_height,
            -Vector3::y(),
            spacing,
        );
        sample_rect(
            &mut out,
            v3(-h.x, -h.y, -h.z),
            v3(2.0 * h.x, 0.0, 0.0),
            inner_height,
            Vector3::y(),
            spacing,
        );
        sample_rect(
            &mut out,
            v3(-h.x, -h.y, -h.z),
            v3(2.0 * h.x, 0.0, 0.0),
            v3(0.0, 2.0 * h.y, 0.0),
            Vector3::z(),
            spacing,
        );
    }
    Ok(out)
}

/// Model points (bin space) that face the camera at `pose` and are not
/// hidden behind the bin's own walls. The camera sits at the scanner origin.
/// Faces seen at grazing angles are sampled too sparsely by the scanner to
/// pair reliably and are skipped.
pub fn visible_model_points(model: &[ModelPoint], bin: &BinSpec, pose: &Pose) -> Vec<Vector3<f64>> {
    let camera_in_bin = *pose.inverse().translation();
    let boxes = bin.solid_boxes();
    model
        .iter()
        .filter(|m| {
            let to_camera = camera_in_bin - m.position;
            if m.normal.dot(&to_camera) <= MIN_VIEW_COSINE * to_camera.norm() {
                return false;
            }
            let dist = to_camera.norm();
            let dir = -to_camera / dist;
            // blocked if the ray enters any part well before reaching the point
            !boxes.iter().any(|b| {
                b.ray_hit(&camera_in_bin, &dir)
                    .is_some_and(|(t, _)| t < dist - 1e-6 * dist.max(1.0) - 1e-3)
            })
        })
        .map(|m| m.position)
        .collect()
}

/// Least-squares rigid transform `(R, t)` minimizing `Σ |R s + t − d|²`,
/// with `det R = +1` enforced.
pub fn rigid_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = src.len();
    if n == 0 || n != dst.len() {
        return None;
    }
    let cs = src.iter().sum::<Vector3<f64>>() / n as f64;
    let cd = dst.iter().sum::<Vector3<f64>>() / n as f64;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Some((r, cd - r * cs))
}

struct Pairing {
    src: Vec<Vector3<f64>>,
    dst: Vec<Vector3<f64>>,
    cost: f64,
}

fn pair(model: &[Vector3<f64>], tree: &KdTree, pose: &Pose, radius: f64) -> Pairing {
    let r2 = radius * radius;
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut total = 0.0;
    for m in model {
        let p = pose.transform_point(m);
        let (i, d2) = tree.nearest(&p).expect("tree is not empty");
        if d2 <= r2 {
            src.push(*m);
            dst.push(*tree.point(i));
            total += d2;
        } else {
            total += r2;
        }
    }
    Pairing {
        src,
        dst,
        cost: (total / model.len() as f64).sqrt(),
    }
}

/// Refines `initial` (bin → scanner) against the valid points of `scan`.
pub fn refine_icp(
    scan: &StructuredScan,
    initial: &Pose,
    bin: &BinSpec,
    params: &IcpParams,
) -> Result<IcpResult, IcpError> {
    params.validate()?;
    let model = sample_bin_model(bin, params.model_sample_spacing, ModelSurfaces::All)?;
    let visible = visible_model_points(&model, bin, initial);
    if visible.is_empty() {
        return Err(IcpError::NoVisibleModel);
    }
    let scan_points: Vec<Vector3<f64>> = scan.valid_points().map(|(_, p)| p).collect();
    if scan_points.is_empty() {
        return Err(IcpError::NoCorrespondence(0));
    }
    let tree = KdTree::build(scan_points);
    refine_with_tree(&visible, &tree, initial, params)
}

/// `motion` repeated `scale` times, for small motions.
fn scaled_motion(motion: &Pose, scale: f64) -> Pose {
    let rot = Rotation3::from_matrix_unchecked(*motion.rotation());
    let r = rot.powf(scale).into_inner();
    Pose::from_parts_unchecked(r, motion.translation() * scale)
}

/// ICP loop over a fixed model set and a prebuilt scan index.
pub fn refine_with_tree(
    model: &[Vector3<f64>],
    tree: &KdTree,
    initial: &Pose,
    params: &IcpParams,
) -> Result<IcpResult, IcpError> {
    let mut pose = *initial;
    let mut current = pair(model, tree, &pose, params.rejection_radius);
    let mut history = vec![current.cost];
    let mut iterations = 0;
    while iterations < params.max_iterations {
        if current.src.is_empty() {
            return Err(IcpError::NoCorrespondence(iterations));
        }
        iterations += 1;
        let (r, t) = rigid_align(&current.src, &current.dst)
            .ok_or(IcpError::NoCorrespondence(iterations))?;
        let mut next_pose = Pose::from_parts_unchecked(r, t);
        let mut next = pair(model, tree, &next_pose, params.rejection_radius);
        // Line search along the step; only cheaper poses are taken.
        let step = pose.inverse().compose(&next_pose);
        let mut scale = 2.0;
        while scale <= MAX_STEP_SCALE {
            let candidate = pose.compose(&scaled_motion(&step, scale));
            let trial = pair(model, tree, &candidate, params.rejection_radius);
            if trial.src.is_empty() || trial.cost >= next.cost {
                break;
            }
            next_pose = candidate;
            next = trial;
            scale *= 2.0;
        }
        let improvement = current.cost - next.cost;
        history.push(next.cost);
        pose = next_pose;
        current = next;
        if improvement < params.convergence_delta {
            break;
        }
    }
    if current.src.is_empty() {
        return Err(IcpError::NoCorrespondence(iterations));
    }
    let rotation = canonicalize_symmetry(pose.rotation());
    let pose = Pose::new(rotation, *pose.translation()).expect("aligned rotation is proper");
    let paired = current.src.len();
    Ok(IcpResult {
        pose,
        iterations_used: iterations,
        final_mean_distance: current.cost,
        paired_points: paired,
        confident: paired >= params.min_paired_points,
        cost_history: history,
    })
}
