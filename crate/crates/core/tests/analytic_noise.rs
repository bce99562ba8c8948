mod common;

use binpose::analytic::{estimate_pose_analytic, AnalyticParams};
use binpose::metrics::pose_errors;
use binpose::synth::{generate_suite, render_scan, SuiteConfig, SuiteKind};
use common::median;

/// Median translation error of the analytic fitter on the visible-rim suite.
fn median_te(noise_sigma: f64) -> f64 {
    let cfg = SuiteConfig {
        count: 50,
        kind: SuiteKind::VisibleRim,
        noise_sigma,
        ..SuiteConfig::default()
    };
    let mut te: Vec<f64> = generate_suite(&cfg, 7)
        .unwrap()
        .iter()
        .map(|s| {
            let (scan, gt) = render_scan(&s.scene, &s.camera).unwrap();
            estimate_pose_analytic(&scan, &s.scene.bin, &AnalyticParams::default())
                .pose()
                .map_or(f64::INFINITY, |p| pose_errors(&gt, p).0)
        })
        .collect();
    median(&mut te)
}

#[test]
fn median_error_grows_with_noise() {
    let medians: Vec<f64> = [0.0, 1.0, 3.0].iter().map(|s| median_te(*s)).collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
    assert!(medians[2].is_finite(), "{medians:?}");
}
