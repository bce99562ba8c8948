//! Synthetic structured-light style scans of bin scenes.
//!
//! Every pixel casts one pinhole ray against the bin walls and floor, the
//! items placed in bin space and a background plane; the nearest hit wins.
//! Noise and dropout come from a per-pixel random stream derived from the
//! scene seed and the pixel index, so output does not depend on how rows
//! are scheduled across threads.

mod suite;

pub use suite::{generate_suite, SceneTag, SuiteConfig, SuiteError, SuiteKind, SuiteScene};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::bin_spec::{Aabb, BinSpec};
use crate::kv::{KvError, KvMap, KvWriter};
use crate::pose::{axis_angle, Pose};
use crate::rotparam::canonicalize_symmetry;
use crate::scan::StructuredScan;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera origin lies inside a solid ({0})")]
    InvalidCamera(&'static str),
    #[error("invalid camera model: {0}")]
    BadCamera(String),
    #[error("invalid scene: {0}")]
    BadScene(String),
    #[error(transparent)]
    Kv(#[from] KvError),
}

/// Pinhole camera; `pose` maps camera coordinates (x right, y down,
/// z forward) to world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub focal_length: f64,
    pub principal_point: (f64, f64),
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(
        width: usize,
        height: usize,
        focal_length: f64,
        principal_point: (f64, f64),
        pose: Pose,
    ) -> Result<Self, SynthError> {
        if width == 0 || height == 0 {
            return Err(SynthError::BadCamera("zero image size".into()));
        }
        if !(focal_length > 0.0) || !focal_length.is_finite() {
            return Err(SynthError::BadCamera(
                "focal length must be positive".into(),
            ));
        }
        let (cx, cy) = principal_point;
        if !(cx >= 0.0 && cx <= width as f64 && cy >= 0.0 && cy <= height as f64) {
            return Err(SynthError::BadCamera(
                "principal point outside image".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            focal_length,
            principal_point,
            pose,
        })
    }

    /// Centered principal point.
    pub fn centered(
        width: usize,
        height: usize,
        focal_length: f64,
        pose: Pose,
    ) -> Result<Self, SynthError> {
        Self::new(
            width,
            height,
            focal_length,
            (width as f64 / 2.0, height as f64 / 2.0),
            pose,
        )
    }

    /// Unit ray direction through pixel `(col, row)` in camera coordinates.
    pub fn ray(&self, col: usize, row: usize) -> Vector3<f64> {
        let (cx, cy) = self.principal_point;
        Vector3::new(
            (col as f64 - cx) / self.focal_length,
            (row as f64 - cy) / self.focal_length,
            1.0,
        )
        .normalize()
    }

    /// Pixel coordinates of a camera-space point in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let (cx, cy) = self.principal_point;
        Some((
            self.focal_length * p.x / p.z + cx,
            self.focal_length * p.y / p.z + cy,
        ))
    }

    fn write_kv(&self, w: &mut KvWriter) {
        w.put("camera.width", self.width)
            .put("camera.height", self.height)
            .put("camera.focal_length", self.focal_length)
            .put_floats(
                "camera.principal_point",
                &[self.principal_point.0, self.principal_point.1],
            )
            .put_floats("camera.pose", &self.pose.to_row_major());
    }

    fn from_kv(m: &KvMap) -> Result<Self, SynthError> {
        let pp = floats_n(m, "camera.principal_point", 2)?;
        let pose = pose_from_kv(m, "camera.pose")?;
        Self::new(
            m.require("camera.width")?,
            m.require("camera.height")?,
            m.require("camera.focal_length")?,
            (pp[0], pp[1]),
            pose,
        )
    }
}

/// Item placed in bin space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Occluder {
    Box(Aabb),
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Occluder {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Occluder::Box(b) => b.contains(p),
            Occluder::Sphere { center, radius } => (p - center).norm() <= *radius,
        }
    }

    fn ray_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Occluder::Box(b) => b.ray_hit(o, d).map(|h| h.0),
            Occluder::Sphere { center, radius } => ray_sphere(o, d, center, *radius),
        }
    }
}

fn ray_sphere(o: &Vector3<f64>, d: &Vector3<f64>, c: &Vector3<f64>, r: f64) -> Option<f64> {
    // |o + t d - c|² = r² with |d| = 1
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

/// Plane `normal · x = offset` in world coordinates; the half-space below
/// it (`normal · x < offset`) is solid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self, SynthError> {
        let n = normal.norm();
        if !(n > 0.0) || !offset.is_finite() {
            return Err(SynthError::BadScene("degenerate background plane".into()));
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    fn ray_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(d);
        if denom == 0.0 {
            return None;
        }
        let t = -self.signed_distance(o) / denom;
        (t > 0.0).then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub bin: BinSpec,
    /// Bin space → world.
    pub bin_pose: Pose,
    pub occluders: Vec<Occluder>,
    pub background_plane: Option<Plane>,
    pub noise_sigma: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(SynthError::BadScene("noise_sigma must be >= 0".into()));
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return Err(SynthError::BadScene(
                "dropout_rate must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn write_kv(&self, w: &mut KvWriter) {
        w.put("bin.inner_length", self.bin.inner_length())
            .put("bin.inner_width", self.bin.inner_width())
            .put("bin.inner_depth", self.bin.inner_depth())
            .put("bin.wall_thickness", self.bin.wall_thickness())
            .put_floats("bin_pose", &self.bin_pose.to_row_major());
        match &self.background_plane {
            Some(p) => w.put_floats(
                "background_plane",
                &[p.normal.x, p.normal.y, p.normal.z, p.offset],
            ),
            None => w.put("background_plane", "none"),
        };
        w.put("noise_sigma", self.noise_sigma)
            .put("dropout_rate", self.dropout_rate)
            .put("seed", self.seed)
            .put("occluders", self.occluders.len());
        for (i, o) in self.occluders.iter().enumerate() {
            let key = format!("occluder.{i}");
            match o {
                Occluder::Box(b) => {
                    let v: Vec<String> = b
                        .min
                        .iter()
                        .chain(b.max.iter())
                        .map(|x| format!("{x}"))
                        .collect();
                    w.put(&key, format!("box {}", v.join(" ")));
                }
                Occluder::Sphere { center, radius } => {
                    w.put(
                        &key,
                        format!("sphere {} {} {} {}", center.x, center.y, center.z, radius),
                    );
                }
            }
        }
    }

    pub(crate) fn from_kv(m: &KvMap) -> Result<Self, SynthError> {
        let bin = BinSpec::new(
            m.require("bin.inner_length")?,
            m.require("bin.inner_width")?,
            m.require("bin.inner_depth")?,
            m.require("bin.wall_thickness")?,
        )
        .map_err(|e| SynthError::BadScene(e.to_string()))?;
        let bin_pose = pose_from_kv(m, "bin_pose")?;
        let background_plane = match m.get_str("background_plane") {
            None | Some("none") => None,
            Some(_) => {
                let v = floats_n(m, "background_plane", 4)?;
                Some(Plane::new(Vector3::new(v[0], v[1], v[2]), v[3])?)
            }
        };
        let count: usize = m.require("occluders")?;
        let mut occluders = Vec::with_capacity(count);
        for i in 0..count {
            let key = format!("occluder.{i}");
            let raw = m
                .get_str(&key)
                .ok_or_else(|| KvError::Missing(key.clone()))?;
            let mut parts = raw.split_whitespace();
            let kind = parts.next().unwrap_or("");
            let nums = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| SynthError::BadScene(format!("{key}: bad number")))?;
            let occ = match (kind, nums.len()) {
                ("box", 6) => Occluder::Box(Aabb::new(
                    Vector3::new(nums[0], nums[1], nums[2]),
                    Vector3::new(nums[3], nums[4], nums[5]),
                )),
                ("sphere", 4) => Occluder::Sphere {
                    center: Vector3::new(nums[0], nums[1], nums[2]),
                    radius: nums[3],
                },
                _ => return Err(SynthError::BadScene(format!("{key}: bad occluder"))),
            };
            occluders.push(occ);
        }
        let spec = Self {
            bin,
            bin_pose,
            occluders,
            background_plane,
            noise_sigma: m.require("noise_sigma")?,
            dropout_rate: m.require("dropout_rate")?,
            seed: m.require("seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn floats_n(m: &KvMap, key: &str, n: usize) -> Result<Vec<f64>, SynthError> {
    let v = m
        .get_floats(key)?
        .ok_or_else(|| KvError::Missing(key.to_string()))?;
    if v.len() != n {
        return Err(SynthError::BadScene(format!("{key}: expected {n} numbers")));
    }
    Ok(v)
}

fn pose_from_kv(m: &KvMap, key: &str) -> Result<Pose, SynthError> {
    let v = floats_n(m, key, 16)?;
    Pose::from_row_major(&v).map_err(|e| SynthError::BadScene(format!("{key}: {e}")))
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    /// Bin part index (see [`BinSpec::solid_boxes`]) and face index
    /// (`axis * 2 + side`).
    Bin {
        part: usize,
        face: usize,
    },
    Occluder(usize),
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub surface: Surface,
}

/// Nearest intersection of a ray given in bin space with the bin solid.
pub fn ray_bin_intersection(
    bin: &BinSpec,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<RayHit> {
    bin.solid_boxes()
        .iter()
        .enumerate()
        .filter_map(|(part, b)| {
            b.ray_hit(origin, dir).map(|(t, face)| RayHit {
                distance: t,
                surface: Surface::Bin { part, face },
            })
        })
        .min_by(|a, b| a.distance.total_cmp(&b.distance))
}

/// Scene expressed in camera coordinates, ready for ray casting.
struct CameraFrameScene<'a> {
    spec: &'a SceneSpec,
    /// Camera → bin space.
    camera_in_bin: Pose,
    plane: Option<Plane>,
}

impl<'a> CameraFrameScene<'a> {
    fn new(spec: &'a SceneSpec, camera: &CameraModel) -> Result<Self, SynthError> {
        let bin_to_camera = camera.pose.inverse().compose(&spec.bin_pose);
        let camera_in_bin = bin_to_camera.inverse();
        let origin_bin = *camera_in_bin.translation();
        if spec
            .bin
            .solid_boxes()
            .iter()
            .any(|b| b.contains(&origin_bin))
        {
            return Err(SynthError::InvalidCamera("bin wall"));
        }
        if spec.occluders.iter().any(|o| o.contains(&origin_bin)) {
            return Err(SynthError::InvalidCamera("occluder"));
        }
        let plane = match spec.background_plane {
            Some(p) => {
                if p.signed_distance(camera.pose.translation()) <= 0.0 {
                    return Err(SynthError::InvalidCamera("background"));
                }
                // world plane → camera frame
                let cam_inv = camera.pose.inverse();
                let n = cam_inv.transform_vector(&p.normal);
                let point_on = cam_inv.transform_point(&(p.normal * p.offset));
                Some(Plane {
                    normal: n,
                    offset: n.dot(&point_on),
                })
            }
            None => None,
        };
        Ok(Self {
            spec,
            camera_in_bin,
            plane,
        })
    }

    fn cast(&self, dir_cam: &Vector3<f64>) -> Option<RayHit> {
        let o = self.camera_in_bin.translation();
        let d = self.camera_in_bin.transform_vector(dir_cam);
        let mut best = ray_bin_intersection(&self.spec.bin, o, &d);
        let mut consider = |t: f64, surface: Surface| {
            if best.is_none_or(|b| t < b.distance) {
                best = Some(RayHit {
                    distance: t,
                    surface,
                });
            }
        };
        for (i, occ) in self.spec.occluders.iter().enumerate() {
            if let Some(t) = occ.ray_hit(o, &d) {
                consider(t, Surface::Occluder(i));
            }
        }
        if let Some(plane) = &self.plane {
            if let Some(t) = plane.ray_hit(&Vector3::zeros(), dir_cam) {
                consider(t, Surface::Background);
            }
        }
        best
    }
}

/// Noise-free per-pixel hits in camera coordinates (row-major).
pub fn render_hits(
    scene: &SceneSpec,
    camera: &CameraModel,
) -> Result<Vec<Option<RayHit>>, SynthError> {
    scene.validate()?;
    let frame = CameraFrameScene::new(scene, camera)?;
    let w = camera.width;
    Ok((0..camera.width * camera.height)
        .into_par_iter()
        .map(|i| frame.cast(&camera.ray(i % w, i / w)))
        .collect())
}

/// Renders a scan and returns it with the canonicalized bin → camera pose.
pub fn render_scan(
    scene: &SceneSpec,
    camera: &CameraModel,
) -> Result<(StructuredScan, Pose), SynthError> {
    scene.validate()?;
    let frame = CameraFrameScene::new(scene, camera)?;
    let w = camera.width;
    let base = ChaCha8Rng::seed_from_u64(scene.seed);
    let sigma = scene.noise_sigma;
    let dropout = scene.dropout_rate;
    let points: Vec<[f32; 3]> = (0..camera.width * camera.height)
        .into_par_iter()
        .map(|i| {
            let dir = camera.ray(i % w, i / w);
            let hit = match frame.cast(&dir) {
                Some(h) => h,
                None => return [f32::NAN; 3],
            };
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            let u: f64 = rng.random();
            let n: f64 = rng.sample(StandardNormal);
            if u < dropout {
                return [f32::NAN; 3];
            }
            let p = dir * (hit.distance + sigma * n);
            [p.x as f32, p.y as f32, p.z as f32]
        })
        .collect();
    let scan = StructuredScan::from_points(camera.width, camera.height, points)
        .map_err(|e| SynthError::BadCamera(e.to_string()))?;
    let gt = camera.pose.inverse().compose(&scene.bin_pose);
    let gt = Pose::from_parts_unchecked(canonicalize_symmetry(gt.rotation()), *gt.translation());
    Ok((scan, gt))
}

/// Renders `scene` but keeps only the inner floor within `radius` mm of its
/// center. Models a bin whose rim and walls are hidden by its contents, the
/// case where refinement tends to snap onto the floor.
pub fn render_floor_patch(
    scene: &SceneSpec,
    camera: &CameraModel,
    radius: f64,
) -> Result<(StructuredScan, Pose), SynthError> {
    let (mut scan, gt) = render_scan(scene, camera)?;
    let hits = render_hits(scene, camera)?;
    let floor_center =
        camera
            .pose
            .inverse()
            .transform_point(&scene.bin_pose.transform_point(&Vector3::new(
                0.0,
                0.0,
                -scene.bin.half_inner().z,
            )));
    scan.retain(|i, p| {
        matches!(
            hits[i],
            Some(RayHit {
                surface: Surface::Bin { part: 4, face: 5 },
                ..
            })
        ) && (p - floor_center).norm() <= radius
    });
    Ok((scan, gt))
}

/// Rotates `pose` by exactly `angle` radians about a random axis through
/// the bin origin and shifts it by exactly `offset` mm in a random direction.
/// Stands in for a learned pose prediction when testing refinement.
pub fn perturb_pose<R: Rng>(pose: &Pose, angle: f64, offset: f64, rng: &mut R) -> Pose {
    let axis = random_unit(rng);
    let shift = random_unit(rng) * offset;
    let rotation = canonicalize_symmetry(&(axis_angle(&axis, angle) * pose.rotation()));
    Pose::new(rotation, pose.translation() + shift).expect("product of rotations is proper")
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::rot_x;
    use std::f64::consts::PI;

    pub(crate) fn looking_down(height: f64) -> Pose {
        // camera z (forward) = world -z
        Pose::new(rot_x(PI), Vector3::new(0.0, 0.0, height)).unwrap()
    }

    fn simple_scene() -> SceneSpec {
        let bin = BinSpec::new(300.0, 200.0, 100.0, 6.0).unwrap();
        SceneSpec {
            bin,
            // floor bottom on the table
            bin_pose: Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, 56.0))
                .unwrap(),
            occluders: vec![],
            background_plane: Some(Plane::new(Vector3::z(), 0.0).unwrap()),
            noise_sigma: 0.0,
            dropout_rate: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn rim_depth_is_exact_looking_down() {
        let scene = simple_scene();
        // rim top at world z = 106, camera 1000 mm above it
        let cam = CameraModel::centered(160, 120, 120.0, looking_down(1106.0)).unwrap();
        let hits = render_hits(&scene, &cam).unwrap();
        let (scan, _) = render_scan(&scene, &cam).unwrap();
        let mut rim = 0;
        for (i, h) in hits.iter().enumerate() {
            let h = h.unwrap();
            let p = cam.ray(i % 160, i / 160) * h.distance;
            let on_rim = matches!(h.surface, Surface::Bin { face: 5, part } if part < 4);
            if on_rim {
                rim += 1;
                assert!((p.z - 1000.0).abs() < 1e-6, "rim depth {}", p.z);
                assert!((scan.point(i).unwrap().z - 1000.0).abs() < 1e-6);
            }
        }
        assert!(rim > 20);
    }

    #[test]
    fn same_seed_same_scan() {
        let mut scene = simple_scene();
        scene.noise_sigma = 2.0;
        scene.dropout_rate = 0.1;
        let cam = CameraModel::centered(80, 60, 60.0, looking_down(1106.0)).unwrap();
        let (a, ga) = render_scan(&scene, &cam).unwrap();
        let (b, gb) = render_scan(&scene, &cam).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        scene.seed += 1;
        let (c, _) = render_scan(&scene, &cam).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn camera_inside_solid_is_rejected() {
        let scene = simple_scene();
        // inside the +x wall
        let pose = Pose::new(rot_x(PI), Vector3::new(152.0, 0.0, 80.0)).unwrap();
        let cam = CameraModel::centered(8, 8, 10.0, pose).unwrap();
        assert!(matches!(
            render_scan(&scene, &cam),
            Err(SynthError::InvalidCamera(_))
        ));
        let below = Pose::new(rot_x(PI), Vector3::new(500.0, 0.0, -10.0)).unwrap();
        let cam = CameraModel::centered(8, 8, 10.0, below).unwrap();
        assert!(matches!(
            render_scan(&scene, &cam),
            Err(SynthError::InvalidCamera(_))
        ));
    }

    #[test]
    fn bad_camera_and_scene_parameters() {
        assert!(CameraModel::new(10, 10, 0.0, (5.0, 5.0), Pose::identity()).is_err());
        assert!(CameraModel::new(10, 10, 5.0, (11.0, 5.0), Pose::identity()).is_err());
        let mut s = simple_scene();
        s.dropout_rate = 1.0;
        assert!(s.validate().is_err());
        s.dropout_rate = 0.0;
        s.noise_sigma = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn scene_kv_round_trip() {
        let mut s = simple_scene();
        s.occluders.push(Occluder::Sphere {
            center: Vector3::new(1.0, 2.0, -30.0),
            radius: 12.5,
        });
        s.occluders.push(Occluder::Box(Aabb::new(
            Vector3::new(-10.0, -10.0, -50.0),
            Vector3::new(10.0, 5.0, -20.0),
        )));
        let mut w = KvWriter::new();
        s.write_kv(&mut w);
        let back = SceneSpec::from_kv(&KvMap::parse(&w.finish()).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn ground_truth_is_bin_to_camera() {
        let scene = simple_scene();
        let cam = CameraModel::centered(16, 12, 12.0, looking_down(1106.0)).unwrap();
        let (_, gt) = render_scan(&scene, &cam).unwrap();
        // bin centroid at world z = 56 → depth 1050
        assert!((gt.translation() - Vector3::new(0.0, 0.0, 1050.0)).norm() < 1e-9);
        // bin z axis points back at the camera
        assert!((gt.rotation().column(2) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }
}
