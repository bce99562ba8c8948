//! Helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
        }
    }
}

/// Rotation from four raw quaternion components, for proptest strategies.
pub fn rotation_from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Option<Matrix3<f64>> {
    let q = Quaternion::new(w, x, y, z);
    (q.norm() > 1e-3).then(|| {
        UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .into_inner()
    })
}

pub fn to_quaternion(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))
}

/// Angle between two rotations through their unit quaternions.
pub fn quaternion_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let qa = to_quaternion(a);
    let qb = to_quaternion(b);
    let rel = qa.inverse() * qb;
    2.0 * rel.imag().norm().atan2(rel.w.abs())
}

/// Symmetry-aware rotation error computed with quaternions: the bin's half
/// turn about its own z axis is the quaternion (0, 0, 0, 1) applied on the
/// right.
pub fn quaternion_rotation_error(r_hat: &Matrix3<f64>, r: &Matrix3<f64>) -> f64 {
    let half_turn = UnitQuaternion::from_quaternion(Quaternion::new(0.0, 0.0, 0.0, 1.0));
    let flipped = (to_quaternion(r_hat) * half_turn)
        .to_rotation_matrix()
        .into_inner();
    quaternion_angle(r_hat, r).min(quaternion_angle(&flipped, r))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
