//! Randomized bin scenes for benchmarking.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{CameraModel, Occluder, Plane, SceneSpec, SynthError};
use crate::bin_spec::{Aabb, BinSpec};
use crate::kv::{KvError, KvMap, KvWriter};
use crate::pose::{rot_x, rot_y, rot_z, Pose};

const MAX_PLACEMENT_ATTEMPTS: usize = 200;
/// Minimum distance in pixels between projected outer rim corners and the
/// image border.
const IMAGE_MARGIN_PX: f64 = 8.0;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("empty range for {0}")]
    EmptyRange(&'static str),
    #[error("invalid suite parameter: {0}")]
    Invalid(String),
    #[error("scene {0}: could not place the camera with the whole bin in view")]
    Placement(usize),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    VisibleRim,
    Occluded,
}

impl FromStr for SuiteKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visible-rim" => Ok(Self::VisibleRim),
            "occluded" => Ok(Self::Occluded),
            other => Err(format!("unknown suite kind {other:?}")),
        }
    }
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::VisibleRim => "visible-rim",
            Self::Occluded => "occluded",
        })
    }
}

pub type SceneTag = SuiteKind;

/// Sampling ranges for [`generate_suite`]. Lengths in mm, angles in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub count: usize,
    pub kind: SuiteKind,
    pub image_width: usize,
    pub image_height: usize,
    pub focal_length: f64,
    pub distance: (f64, f64),
    pub max_tilt_deg: f64,
    pub inner_length: (f64, f64),
    pub inner_width: (f64, f64),
    pub inner_depth: (f64, f64),
    pub wall_thickness: (f64, f64),
    pub max_items: usize,
    pub noise_sigma: f64,
    pub dropout_rate: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            count: 50,
            kind: SuiteKind::VisibleRim,
            image_width: 516,
            image_height: 386,
            focal_length: 560.0,
            distance: (1150.0, 1400.0),
            max_tilt_deg: 20.0,
            inner_length: (280.0, 440.0),
            inner_width: (200.0, 340.0),
            inner_depth: (120.0, 250.0),
            wall_thickness: (5.0, 8.0),
            max_items: 4,
            noise_sigma: 0.0,
            dropout_rate: 0.0,
        }
    }
}

const SUITE_KEYS: &[&str] = &[
    "count",
    "kind",
    "image_width",
    "image_height",
    "focal_length",
    "distance",
    "max_tilt_deg",
    "inner_length",
    "inner_width",
    "inner_depth",
    "wall_thickness",
    "max_items",
    "noise_sigma",
    "dropout_rate",
];

fn range(m: &KvMap, key: &str, default: (f64, f64)) -> Result<(f64, f64), KvError> {
    match m.get_floats(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(v) => Err(KvError::Value {
            key: key.to_string(),
            value: format!("{v:?}"),
        }),
    }
}

impl SuiteConfig {
    /// Reads `suite.*` keys; absent keys keep their defaults.
    pub fn from_kv(m: &KvMap) -> Result<Self, SuiteError> {
        m.check_known("suite.", SUITE_KEYS)?;
        let d = Self::default();
        let kind = match m.get_str("suite.kind") {
            None => d.kind,
            Some(s) => s.parse().map_err(SuiteError::Invalid)?,
        };
        let cfg = Self {
            count: m.get("suite.count")?.unwrap_or(d.count),
            kind,
            image_width: m.get("suite.image_width")?.unwrap_or(d.image_width),
            image_height: m.get("suite.image_height")?.unwrap_or(d.image_height),
            focal_length: m.get("suite.focal_length")?.unwrap_or(d.focal_length),
            distance: range(m, "suite.distance", d.distance)?,
            max_tilt_deg: m.get("suite.max_tilt_deg")?.unwrap_or(d.max_tilt_deg),
            inner_length: range(m, "suite.inner_length", d.inner_length)?,
            inner_width: range(m, "suite.inner_width", d.inner_width)?,
            inner_depth: range(m, "suite.inner_depth", d.inner_depth)?,
            wall_thickness: range(m, "suite.wall_thickness", d.wall_thickness)?,
            max_items: m.get("suite.max_items")?.unwrap_or(d.max_items),
            noise_sigma: m.get("suite.noise_sigma")?.unwrap_or(d.noise_sigma),
            dropout_rate: m.get("suite.dropout_rate")?.unwrap_or(d.dropout_rate),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, w: &mut KvWriter) {
        w.put("suite.count", self.count)
            .put("suite.kind", self.kind)
            .put("suite.image_width", self.image_width)
            .put("suite.image_height", self.image_height)
            .put("suite.focal_length", self.focal_length)
            .put_floats("suite.distance", &[self.distance.0, self.distance.1])
            .put("suite.max_tilt_deg", self.max_tilt_deg)
            .put_floats(
                "suite.inner_length",
                &[self.inner_length.0, self.inner_length.1],
            )
            .put_floats(
                "suite.inner_width",
                &[self.inner_width.0, self.inner_width.1],
            )
            .put_floats(
                "suite.inner_depth",
                &[self.inner_depth.0, self.inner_depth.1],
            )
            .put_floats(
                "suite.wall_thickness",
                &[self.wall_thickness.0, self.wall_thickness.1],
            )
            .put("suite.max_items", self.max_items)
            .put("suite.noise_sigma", self.noise_sigma)
            .put("suite.dropout_rate", self.dropout_rate);
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        let ranges = [
            ("distance", self.distance),
            ("inner_length", self.inner_length),
            ("inner_width", self.inner_width),
            ("inner_depth", self.inner_depth),
            ("wall_thickness", self.wall_thickness),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(SuiteError::EmptyRange(name));
            }
        }
        if self.inner_width.0 > self.inner_length.1 {
            return Err(SuiteError::EmptyRange("inner_width"));
        }
        if !(0.0..=60.0).contains(&self.max_tilt_deg) {
            return Err(SuiteError::Invalid(
                "max_tilt_deg must lie in [0, 60]".into(),
            ));
        }
        if self.image_width == 0 || self.image_height == 0 || !(self.focal_length > 0.0) {
            return Err(SuiteError::Invalid("bad camera intrinsics".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SuiteError::Invalid("noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(SuiteError::Invalid(
                "dropout_rate must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One generated scene with its camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteScene {
    pub scene: SceneSpec,
    pub camera: CameraModel,
    pub tag: SceneTag,
}

impl SuiteScene {
    pub fn to_kv_string(&self) -> String {
        let mut w = KvWriter::new();
        w.put("tag", self.tag);
        self.scene.write_kv(&mut w);
        self.camera.write_kv(&mut w);
        w.finish()
    }

    pub fn parse(text: &str) -> Result<Self, SuiteError> {
        let m = KvMap::parse(text)?;
        let tag = m
            .get_str("tag")
            .ok_or_else(|| KvError::Missing("tag".into()))?
            .parse()
            .map_err(SuiteError::Invalid)?;
        Ok(Self {
            scene: SceneSpec::from_kv(&m)?,
            camera: CameraModel::from_kv(&m)?,
            tag,
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Deterministic list of scenes; scene `i` draws from its own stream of the
/// seed so a prefix of a longer suite equals the shorter suite.
pub fn generate_suite(config: &SuiteConfig, seed: u64) -> Result<Vec<SuiteScene>, SuiteError> {
    config.validate()?;
    (0..config.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_scene(config, &mut rng, i, seed)
        })
        .collect()
}

fn sample_scene(
    cfg: &SuiteConfig,
    rng: &mut ChaCha8Rng,
    index: usize,
    seed: u64,
) -> Result<SuiteScene, SuiteError> {
    let length = uniform(rng, cfg.inner_length);
    let width_hi = cfg.inner_width.1.min(length);
    let width = uniform(rng, (cfg.inner_width.0.min(width_hi), width_hi));
    let depth = uniform(rng, cfg.inner_depth);
    let wall = uniform(rng, cfg.wall_thickness);
    let bin =
        BinSpec::new(length, width, depth, wall).map_err(|e| SuiteError::Invalid(e.to_string()))?;

    // bin stands on the table (world z = 0) with random yaw
    let yaw = rng.random_range(0.0..2.0 * PI);
    let offset = Vector3::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        0.0,
    );
    let base_z = depth / 2.0 + wall;
    let bin_pose = Pose::new(rot_z(yaw), offset + Vector3::new(0.0, 0.0, base_z))
        .expect("rotation about z is proper");
    let table = Plane::new(Vector3::z(), 0.0)?;

    let occluders = match cfg.kind {
        SuiteKind::VisibleRim => floor_items(&bin, cfg.max_items, rng),
        SuiteKind::Occluded => covering_pile(&bin, rng),
    };

    let rim_center = bin_pose.transform_point(&Vector3::new(0.0, 0.0, depth / 2.0));
    let outer_corners: Vec<Vector3<f64>> = {
        let h = bin.half_inner();
        let (ox, oy) = (h.x + wall, h.y + wall);
        [(ox, oy), (-ox, oy), (-ox, -oy), (ox, -oy)]
            .iter()
            .map(|&(x, y)| bin_pose.transform_point(&Vector3::new(x, y, h.z)))
            .collect()
    };

    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let dist = uniform(rng, cfg.distance);
        let tilt = rng.random_range(0.0..=cfg.max_tilt_deg.to_radians());
        let azimuth = rng.random_range(0.0..2.0 * PI);
        let roll = rng.random_range(0.0..2.0 * PI);
        let aim = rim_center
            + Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                0.0,
            );
        let rotation: Matrix3<f64> = rot_z(azimuth) * rot_y(tilt) * rot_x(PI) * rot_z(roll);
        let forward = rotation.column(2).into_owned();
        let position = aim - forward * dist;
        let cam_pose = Pose::new(rotation, position).expect("product of rotations");
        let camera = CameraModel::centered(
            cfg.image_width,
            cfg.image_height,
            cfg.focal_length,
            cam_pose,
        )?;
        let world_to_cam = camera.pose.inverse();
        let in_view = outer_corners.iter().all(|c| {
            camera
                .project(&world_to_cam.transform_point(c))
                .is_some_and(|(u, v)| {
                    u >= IMAGE_MARGIN_PX
                        && v >= IMAGE_MARGIN_PX
                        && u <= cfg.image_width as f64 - 1.0 - IMAGE_MARGIN_PX
                        && v <= cfg.image_height as f64 - 1.0 - IMAGE_MARGIN_PX
                })
        });
        if !in_view {
            continue;
        }
        let scene = SceneSpec {
            bin,
            bin_pose,
            occluders,
            background_plane: Some(table),
            noise_sigma: cfg.noise_sigma,
            dropout_rate: cfg.dropout_rate,
            seed: seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(index as u64),
        };
        return Ok(SuiteScene {
            scene,
            camera,
            tag: cfg.kind,
        });
    }
    Err(SuiteError::Placement(index))
}

/// Items resting on the bin floor, kept well below the rim.
fn floor_items(bin: &BinSpec, max_items: usize, rng: &mut ChaCha8Rng) -> Vec<Occluder> {
    let h = bin.half_inner();
    let n = if max_items == 0 {
        0
    } else {
        rng.random_range(0..=max_items)
    };
    let max_height = 0.4 * bin.inner_depth();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.5) {
                let half = Vector3::new(
                    rng.random_range(10.0..(0.2 * h.x).max(10.5)),
                    rng.random_range(10.0..(0.2 * h.y).max(10.5)),
                    rng.random_range(5.0..max_height / 2.0),
                );
                let cx = rng.random_range(-(h.x - half.x)..(h.x - half.x));
                let cy = rng.random_range(-(h.y - half.y)..(h.y - half.y));
                Occluder::Box(Aabb::from_center(Vector3::new(cx, cy, -h.z + half.z), half))
            } else {
                let r = rng.random_range(10.0..(max_height / 2.0).min(0.3 * h.y).max(10.5));
                let cx = rng.random_range(-(h.x - r)..(h.x - r));
                let cy = rng.random_range(-(h.y - r)..(h.y - r));
                Occluder::Sphere {
                    center: Vector3::new(cx, cy, -h.z + r),
                    radius: r,
                }
            }
        })
        .collect()
}

/// A heap of parts overflowing the bin, hiding the whole rim.
fn covering_pile(bin: &BinSpec, rng: &mut ChaCha8Rng) -> Vec<Occluder> {
    let h = bin.half_inner();
    let w = bin.wall_thickness();
    let over = rng.random_range(15.0..40.0);
    let thickness = rng.random_range(20.0..60.0);
    vec![Occluder::Box(Aabb::new(
        Vector3::new(-h.x - w - over, -h.y - w - over, h.z - 0.5 * h.z),
        Vector3::new(h.x + w + over, h.y + w + over, h.z + thickness),
    ))]
}
