mod common;

use binpose::icp::{rigid_align, KdTree};
use binpose::metrics::{
    build_curve, read_records, rotation_error, summarize, write_records, EvalRecord, Metric,
};
use binpose::pose::Pose;
use binpose::rotparam::{
    angular_loss, canonicalize_symmetry, joint_loss, joint_loss_gradient, rotation_from_vectors,
    second_column_positive, symmetry_partner, vectors_from_rotation, LossConfig, PoseVectors,
    RotationVectors,
};
use binpose::StructuredScan;
use common::{quaternion_rotation_error, rotation_from_quaternion};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter_map("quaternion too short", |(w, x, y, z)| {
            rotation_from_quaternion(w, x, y, z)
        })
}

fn max_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).abs().max()
}

fn record() -> impl Strategy<Value = EvalRecord> {
    (0u32..1000, prop::option::of((0.0..100.0f64, 0.0..3.1f64))).prop_map(|(id, errs)| match errs {
        Some((te, re)) => EvalRecord::success(format!("s{id}"), "m", te, re),
        None => EvalRecord::failure(format!("s{id}"), "m"),
    })
}

proptest! {
    #[test]
    fn vectors_give_proper_rotations(v_z in vec3(50.0), v_y in vec3(50.0)) {
        let rv = RotationVectors::new(v_z, v_y);
        prop_assume!(v_z.norm() > 1e-3 && v_z.cross(&v_y).norm() > 1e-3 * v_z.norm() * v_y.norm());
        let r = rotation_from_vectors(&rv).unwrap();
        prop_assert!(max_diff(&(r.transpose() * r), &Matrix3::identity()) < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        // third column follows the normalized z vector
        prop_assert!((r.column(2) - v_z.normalize()).norm() < 1e-9);
    }

    #[test]
    fn rotation_round_trips_through_vectors(r in rotation()) {
        let back = rotation_from_vectors(&vectors_from_rotation(&r)).unwrap();
        prop_assert!(max_diff(&back, &r) < 1e-9);
    }

    #[test]
    fn canonical_form_is_shared_by_partners(r in rotation()) {
        let c = canonicalize_symmetry(&r);
        prop_assert_eq!(c, canonicalize_symmetry(&symmetry_partner(&r)));
        prop_assert_eq!(canonicalize_symmetry(&c), c);
        prop_assert!(c == r || c == symmetry_partner(&r));
        prop_assert!(second_column_positive(&c) || c[(0, 1)] == 0.0 && c[(1, 1)] == 0.0 && c[(2, 1)] == 0.0);
    }

    #[test]
    fn partner_is_an_involution(r in rotation()) {
        prop_assert!(max_diff(&symmetry_partner(&symmetry_partner(&r)), &r) == 0.0);
    }

    #[test]
    fn angular_loss_is_symmetric_and_bounded(u in vec3(10.0), v in vec3(10.0)) {
        prop_assume!(u.norm() > 1e-3 && v.norm() > 1e-3);
        let a = angular_loss(&u, &v, 1e-8);
        prop_assert_eq!(a, angular_loss(&v, &u, 1e-8));
        prop_assert!((0.0..=std::f64::consts::PI).contains(&a));
        let exact = u.angle(&v);
        prop_assert!((a - exact).abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_central_differences(
        z in vec3(5.0), y in vec3(5.0), t in vec3(100.0),
        gz in vec3(5.0), gy in vec3(5.0), gtt in vec3(100.0),
        lambda in 0.1..3.0f64,
    ) {
        let pred = PoseVectors::new(z, y, t);
        let gt = PoseVectors::new(gz, gy, gtt);
        let cfg = LossConfig::new(lambda, 1e-8).unwrap();
        let sin = |a: &Vector3<f64>, b: &Vector3<f64>| a.cross(b).norm() / (a.norm() * b.norm());
        prop_assume!(z.norm() > 0.1 && y.norm() > 0.1 && gz.norm() > 0.1 && gy.norm() > 0.1);
        prop_assume!(sin(&z, &gz) > 1e-2 && sin(&y, &gy) > 1e-2);
        prop_assume!((t - gtt).abs().min() > 1e-3);
        let grad = joint_loss_gradient(&pred, &gt, &cfg).unwrap();
        let base = pred.to_array();
        let h = 1e-6;
        for i in 0..9 {
            let (mut hi, mut lo) = (base, base);
            hi[i] += h;
            lo[i] -= h;
            let fd = (joint_loss(&PoseVectors::from_array(&hi), &gt, &cfg)
                - joint_loss(&PoseVectors::from_array(&lo), &gt, &cfg)) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1e-6);
            prop_assert!((grad[i] - fd).abs() / scale < 1e-4, "component {} grad {} fd {}", i, grad[i], fd);
        }
    }

    #[test]
    fn rotation_error_ignores_the_symmetry(a in rotation(), b in rotation()) {
        let e = rotation_error(&a, &b);
        prop_assert_eq!(e, rotation_error(&symmetry_partner(&a), &b));
        prop_assert!((0.0..=std::f64::consts::PI).contains(&e));
        prop_assert!((e - quaternion_rotation_error(&a, &b)).abs() < 1e-9);
        prop_assert!((e - rotation_error(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn curves_are_monotone_and_bounded(records in prop::collection::vec(record(), 1..60)) {
        let thresholds: Vec<f64> = (0..=40).map(|i| i as f64 * 2.5).collect();
        let curve = build_curve(&records, Metric::Translation, &thresholds).unwrap();
        prop_assert!(curve.fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curve.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
        let ok = records.iter().filter(|r| !r.failed()).count() as f64;
        prop_assert!(*curve.fractions.last().unwrap() <= ok / records.len() as f64);
        for (t, f) in thresholds.iter().zip(&curve.fractions) {
            let brute = records.iter().filter(|r| !r.failed() && r.e_te() < *t).count() as f64 / records.len() as f64;
            prop_assert_eq!(*f, brute);
        }
    }

    #[test]
    fn summary_matches_brute_force(records in prop::collection::vec(record(), 0..60)) {
        let s = summarize(&records);
        let ok: Vec<&EvalRecord> = records.iter().filter(|r| !r.failed()).collect();
        prop_assert_eq!(s.total, records.len());
        prop_assert_eq!(s.failed, records.len() - ok.len());
        match s.translation {
            None => prop_assert!(ok.is_empty()),
            Some(st) => {
                let n = ok.len() as f64;
                let mean = ok.iter().map(|r| r.e_te()).sum::<f64>() / n;
                let var = ok.iter().map(|r| (r.e_te() - mean).powi(2)).sum::<f64>() / n;
                prop_assert!((st.mean - mean).abs() < 1e-9);
                prop_assert!((st.std - var.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn records_round_trip(records in prop::collection::vec(record(), 0..30)) {
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(a.failed(), b.failed());
            prop_assert_eq!(&a.scan_id, &b.scan_id);
            if !a.failed() {
                prop_assert!((a.e_te() - b.e_te()).abs() <= 1e-9 * b.e_te().max(1.0));
                prop_assert!((a.e_re() - b.e_re()).abs() <= 1e-9 * b.e_re().max(1.0));
            }
        }
    }

    #[test]
    fn pose_text_round_trips(r in rotation(), t in vec3(2000.0)) {
        let p = Pose::new(r, t).unwrap();
        let back = Pose::parse_text(&p.to_text()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn scan_bytes_round_trip(
        w in 1usize..12, h in 1usize..12,
        values in prop::collection::vec(prop::option::of(-3000.0f32..3000.0), 144 * 3),
    ) {
        let pts: Vec<[f32; 3]> = (0..w * h)
            .map(|i| match (values[3 * i], values[3 * i + 1], values[3 * i + 2]) {
                (Some(x), Some(y), Some(z)) => [x, y, z],
                _ => [f32::NAN; 3],
            })
            .collect();
        let scan = StructuredScan::from_points(w, h, pts).unwrap();
        let mut buf = Vec::new();
        scan.write_to(&mut buf).unwrap();
        prop_assert_eq!(buf.len(), scan.encoded_len());
        let back = StructuredScan::decode(&buf).unwrap();
        prop_assert_eq!(back.valid_mask(), scan.valid_mask());
        let bits = |s: &StructuredScan| -> Vec<u32> {
            s.valid_points().flat_map(|(_, p)| [p.x, p.y, p.z]).map(|v| (v as f32).to_bits()).collect()
        };
        prop_assert_eq!(bits(&back), bits(&scan));
    }

    #[test]
    fn rigid_align_recovers_the_transform(
        r in rotation(), t in vec3(500.0),
        src in prop::collection::vec(vec3(300.0), 4..40),
    ) {
        let spread = src.iter().map(|p| (p - src[0]).norm()).fold(0.0, f64::max);
        prop_assume!(spread > 10.0);
        // need a non-degenerate (non-collinear) cloud
        let c = src.iter().sum::<Vector3<f64>>() / src.len() as f64;
        let cov = src.iter().fold(Matrix3::zeros(), |m, p| m + (p - c) * (p - c).transpose());
        let eig = cov.symmetric_eigenvalues();
        prop_assume!(eig.min() > 1.0);
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| r * p + t).collect();
        let (r_hat, t_hat) = rigid_align(&src, &dst).unwrap();
        prop_assert!(max_diff(&r_hat, &r) < 1e-6);
        prop_assert!((t_hat - t).norm() < 1e-5);
    }

    #[test]
    fn kdtree_matches_brute_force(
        pts in prop::collection::vec(vec3(100.0), 1..200),
        queries in prop::collection::vec(vec3(150.0), 1..20),
    ) {
        let tree = KdTree::build(pts.clone());
        for q in &queries {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, p) in pts.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            prop_assert_eq!(tree.nearest(q), Some(best));
        }
    }
}
