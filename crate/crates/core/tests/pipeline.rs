//! Cross-module integration: closed loops from synthetic scenes back to
//! estimated poses.

use floorloc::config::RunConfig;
use floorloc::matching::{argmax_pose, candidate_orientations, compute_heatmaps, orientation_histogram};
use floorloc::pipeline::{eval_match, gen_scenario, localize, sample_poses, MatchMethod};
use floorloc::scale::AlignmentMode;
use floorloc::synth::{gen_floorplan, perfect_segments, PlanSpec, ScanSpec};
use nalgebra::Vector2;

#[test]
fn perfect_observation_localizes_exactly() {
    // Kernel matching on an error-free observation must recover the pose to
    // within one plan cell on an unambiguous plan.
    let plan = gen_floorplan(21, &PlanSpec::default()).unwrap();
    let cfg = RunConfig::default();
    let plan_hist = orientation_histogram(&plan.vector, 1f64.to_radians()).unwrap();
    let poses = sample_poses(&plan, 5, 77, 0.4).unwrap();
    for truth in &poses {
        let obs = perfect_segments(&plan, truth, 10.0).unwrap();
        assert!(!obs.is_empty());
        let obs_hist = orientation_histogram(&obs, 1f64.to_radians()).unwrap();
        let thetas = candidate_orientations(&obs_hist, &plan_hist, 10).unwrap();
        let stack = compute_heatmaps(
            &plan,
            &obs,
            Vector2::zeros(),
            &thetas,
            &[1.0],
            cfg.alpha,
            cfg.kernel_sigma,
        )
        .unwrap();
        let est = argmax_pose(&stack).unwrap();
        let err = (est.position() - truth.position()).norm();
        assert!(
            err <= plan.resolution() * 1.5,
            "pose ({:.2}, {:.2}, {:.1}°) estimated at ({:.2}, {:.2}, {:.1}°), err {err:.3}",
            truth.x,
            truth.y,
            truth.theta.to_degrees(),
            est.x,
            est.y,
            est.theta.to_degrees()
        );
    }
}

#[test]
fn synthetic_bundle_localizes_end_to_end() {
    // Render depth maps, run the whole observation + matching pipeline.
    let plan_spec = PlanSpec::default();
    let scan_spec = ScanSpec::default();
    let scenario = gen_scenario(3, &plan_spec, &scan_spec, 5, 0.5).unwrap();
    let cfg = RunConfig { unproject_stride: 2, ..RunConfig::default() };
    let outcome = localize(&scenario.bundle, &scenario.plan, &cfg, 42, None).unwrap();
    let err = (outcome.pose.position() - scenario.scan_pose.position()).norm();
    assert!(
        err <= 0.5,
        "scan at ({:.2}, {:.2}, {:.1}°) localized to ({:.2}, {:.2}, {:.1}°), err {err:.3}",
        scenario.scan_pose.x,
        scenario.scan_pose.y,
        scenario.scan_pose.theta.to_degrees(),
        outcome.pose.x,
        outcome.pose.y,
        outcome.pose.theta.to_degrees()
    );
    let ang = {
        let d = (outcome.pose.theta - scenario.scan_pose.theta).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d)
    };
    assert!(ang.to_degrees() <= 10.0, "heading error {:.1}°", ang.to_degrees());
}

#[test]
fn corrupted_scales_still_localize_in_full_mode() {
    let plan_spec = PlanSpec::default();
    let scan_spec = ScanSpec {
        view_scales: vec![1.3, 0.8, 1.1, 0.7, 1.45, 0.95],
        ..ScanSpec::default()
    };
    let scenario = gen_scenario(7, &plan_spec, &scan_spec, 5, 0.5).unwrap();
    let cfg = RunConfig { unproject_stride: 2, alignment_mode: AlignmentMode::Full, ..RunConfig::default() };
    let outcome = localize(&scenario.bundle, &scenario.plan, &cfg, 9, None).unwrap();
    let err = (outcome.pose.position() - scenario.scan_pose.position()).norm();
    assert!(err <= 1.0, "full-mode alignment failed: err {err:.3}");
    // The recovered relative scales should invert the injected corruption.
    let rel = outcome.report.relative.as_ref().unwrap();
    for (i, lambda) in rel.lambdas.iter().enumerate() {
        let expected = scan_spec.view_scales[0] / scan_spec.view_scales[i];
        let err = (lambda - expected).abs() / expected;
        assert!(err < 0.08, "λ{i} = {lambda:.3}, expected {expected:.3}");
    }
}

#[test]
fn eval_kernel_beats_rays_smoke() {
    // Repetitive room grids alias the 36-ray range profile while the dense
    // segment geometry stays distinctive.
    let spec = PlanSpec {
        width: 40.0,
        height: 30.0,
        rooms: 20,
        split_jitter: 0.0,
        oblique_stubs: 3,
        min_room: 3.5,
        ..PlanSpec::default()
    };
    let cfg = RunConfig::default();
    let mut kernel_acc = 0.0;
    let mut rays_acc = 0.0;
    for seed in 0..2 {
        let plan = gen_floorplan(seed, &spec).unwrap();
        let (kernel, _) = eval_match(&plan, 5, MatchMethod::Kernel, &cfg, 3, 36, 10.0).unwrap();
        let (rays, _) = eval_match(&plan, 5, MatchMethod::Rays, &cfg, 3, 36, 10.0).unwrap();
        kernel_acc += kernel.within_1m_30deg;
        rays_acc += rays.within_1m_30deg;
    }
    assert!(
        kernel_acc >= rays_acc,
        "kernel {:.2} vs rays {:.2}",
        kernel_acc / 2.0,
        rays_acc / 2.0
    );
    assert!(kernel_acc / 2.0 >= 0.7, "kernel accuracy {:.2}", kernel_acc / 2.0);
}
