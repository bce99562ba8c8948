//! Cuboid bin dimensions and the bin-space convention.
//!
//! Bin space has its origin at the centroid of the inner cavity, x along the
//! longer inner side, y along the shorter one and z pointing from the floor
//! up through the opening. The rim top lies at `z = inner_depth / 2`.

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BinSpecError {
    #[error("inner length must be >= inner width > 0 (got {length} x {width})")]
    Footprint { length: f64, width: f64 },
    #[error("inner depth and wall thickness must be positive and finite")]
    NonPositive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    inner_length: f64,
    inner_width: f64,
    inner_depth: f64,
    wall_thickness: f64,
}

impl BinSpec {
    pub fn new(
        inner_length: f64,
        inner_width: f64,
        inner_depth: f64,
        wall_thickness: f64,
    ) -> Result<Self, BinSpecError> {
        let all = [inner_length, inner_width, inner_depth, wall_thickness];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(BinSpecError::NonPositive);
        }
        if !(inner_width > 0.0 && inner_length >= inner_width) {
            return Err(BinSpecError::Footprint {
                length: inner_length,
                width: inner_width,
            });
        }
        if inner_depth <= 0.0 || wall_thickness <= 0.0 {
            return Err(BinSpecError::NonPositive);
        }
        Ok(Self {
            inner_length,
            inner_width,
            inner_depth,
            wall_thickness,
        })
    }

    pub fn inner_length(&self) -> f64 {
        self.inner_length
    }

    pub fn inner_width(&self) -> f64 {
        self.inner_width
    }

    pub fn inner_depth(&self) -> f64 {
        self.inner_depth
    }

    pub fn wall_thickness(&self) -> f64 {
        self.wall_thickness
    }

    pub fn half_inner(&self) -> Vector3<f64> {
        Vector3::new(
            self.inner_length / 2.0,
            self.inner_width / 2.0,
            self.inner_depth / 2.0,
        )
    }

    pub fn rim_z(&self) -> f64 {
        self.inner_depth / 2.0
    }

    /// The solid material as five axis-aligned boxes in bin space:
    /// `+x`, `-x`, `+y`, `-y` walls and the floor.
    pub fn solid_boxes(&self) -> [Aabb; 5] {
        let h = self.half_inner();
        let w = self.wall_thickness;
        let z0 = -h.z - w;
        let z1 = h.z;
        [
            Aabb::new(
                Vector3::new(h.x, -h.y - w, z0),
                Vector3::new(h.x + w, h.y + w, z1),
            ),
            Aabb::new(
                Vector3::new(-h.x - w, -h.y - w, z0),
                Vector3::new(-h.x, h.y + w, z1),
            ),
            Aabb::new(Vector3::new(-h.x, h.y, z0), Vector3::new(h.x, h.y + w, z1)),
            Aabb::new(
                Vector3::new(-h.x, -h.y - w, z0),
                Vector3::new(h.x, -h.y, z1),
            ),
            Aabb::new(Vector3::new(-h.x, -h.y, z0), Vector3::new(h.x, h.y, -h.z)),
        ]
    }

    /// Inner rim corners at the rim height, counterclockwise seen from +z.
    pub fn inner_rim_corners(&self) -> [Vector3<f64>; 4] {
        let h = self.half_inner();
        [
            Vector3::new(h.x, h.y, h.z),
            Vector3::new(-h.x, h.y, h.z),
            Vector3::new(-h.x, -h.y, h.z),
            Vector3::new(h.x, -h.y, h.z),
        ]
    }

    pub fn smallest_dimension(&self) -> f64 {
        self.inner_width.min(self.inner_depth)
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_center(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Self {
            min: center - half,
            max: center + half,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }

    /// Slab test. Returns the entry distance and the entered face as
    /// `axis * 2 + (0 for the min side, 1 for the max side)`. Origins inside
    /// the box report no hit.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut face = usize::MAX;
        for axis in 0..3 {
            let o = origin[axis];
            let d = dir[axis];
            if d == 0.0 {
                if o < self.min[axis] || o > self.max[axis] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (t0, t1, near_face) = if inv > 0.0 {
                (
                    (self.min[axis] - o) * inv,
                    (self.max[axis] - o) * inv,
                    axis * 2,
                )
            } else {
                (
                    (self.max[axis] - o) * inv,
                    (self.min[axis] - o) * inv,
                    axis * 2 + 1,
                )
            };
            if t0 > t_enter {
                t_enter = t0;
                face = near_face;
            }
            if t1 < t_exit {
                t_exit = t1;
            }
        }
        if face == usize::MAX || t_enter > t_exit || t_enter <= 0.0 {
            return None;
        }
        Some((t_enter, face))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(BinSpec::new(200.0, 300.0, 100.0, 5.0).is_err());
        assert!(BinSpec::new(300.0, 0.0, 100.0, 5.0).is_err());
        assert!(BinSpec::new(300.0, 200.0, 0.0, 5.0).is_err());
        assert!(BinSpec::new(300.0, 200.0, 100.0, -1.0).is_err());
        assert!(BinSpec::new(300.0, 300.0, 100.0, 1.0).is_ok());
    }

    #[test]
    fn boxes_enclose_cavity() {
        let b = BinSpec::new(300.0, 200.0, 100.0, 5.0).unwrap();
        let boxes = b.solid_boxes();
        let inside = Vector3::new(0.0, 0.0, 0.0);
        assert!(boxes.iter().all(|bx| !bx.contains(&inside)));
        assert!(boxes[0].contains(&Vector3::new(152.0, 0.0, 0.0)));
        assert!(boxes[4].contains(&Vector3::new(0.0, 0.0, -52.0)));
    }

    #[test]
    fn slab_hit_faces() {
        let bx = Aabb::new(Vector3::new(-1.0, -1.0, -1.0), Vector3::new(1.0, 1.0, 1.0));
        let (t, face) = bx
            .ray_hit(&Vector3::new(0.0, 0.0, -5.0), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(face, 4);
        assert!((t - 4.0).abs() < 1e-12);
        let (_, face) = bx
            .ray_hit(&Vector3::new(5.0, 0.2, 0.1), &Vector3::new(-1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!(face, 1);
        assert!(bx
            .ray_hit(&Vector3::new(5.0, 5.0, 0.0), &Vector3::new(-1.0, 0.0, 0.0))
            .is_none());
    }
}
