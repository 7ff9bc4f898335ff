//! End-to-end entry points: localize a bundle against a plan, track a
//! trajectory from a heatmap prior, evaluate matchers on perfect
//! observations, and generate complete synthetic scenarios.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::filter::{self, FilterParams, OdometryStep, RunFlags, TrajectoryMetrics};
use crate::floorplan::FloorPlan;
use crate::geometry::unproject;
use crate::io::{Frame, ObservationBundle};
use crate::matching::{
    argmax_pose, candidate_orientations, compute_heatmaps, normalize_to_pdf, orientation_histogram,
    HeatmapStack, PoseEstimate,
};
use crate::scale::{align_and_merge, ScaleReport, ScanView};
use crate::segments::{extract_segments, filter_radius, rasterize, slice_band, SegmentSet};
use crate::synth::{
    build_distance_field, evaluate, gen_floorplan, perfect_segments, ray_cast, ray_match, render_scan,
    EvalReport, PlanSpec, ScanSpec,
};

/// Everything a `localize` run produces.
#[derive(Debug, Clone)]
pub struct LocalizeOutcome {
    /// Raw per-orientation scores.
    pub stack: HeatmapStack,
    /// The stack normalized to a PDF (particle-filter prior).
    pub pdf: HeatmapStack,
    pub pose: PoseEstimate,
    pub report: ScaleReport,
    pub observed: SegmentSet,
    pub scan_origin: Vector2<f64>,
    pub candidate_thetas: Vec<f64>,
}

/// Full stationary-localization pipeline: unproject, scale-align, slice,
/// extract wall segments, and match against the floor plan.
///
/// `orientations` overrides the config's stationary orientation count when
/// given (the particle-filter prior uses fewer).
pub fn localize(
    bundle: &ObservationBundle,
    plan: &FloorPlan,
    cfg: &RunConfig,
    seed: u64,
    orientations: Option<usize>,
) -> Result<LocalizeOutcome> {
    cfg.validate()?;
    if bundle.frames.is_empty() {
        return Err(Error::invalid("bundle has no frames".to_string()));
    }

    // Per-view clouds in the common (pose-tracking) frame.
    let views: Vec<ScanView> = bundle
        .frames
        .par_iter()
        .map(|frame| {
            let depth = if cfg.use_masks { frame.depth.clone() } else { frame.depth.without_mask() };
            let cloud = unproject(&depth, &frame.intrinsics, &frame.pose, cfg.unproject_stride)?;
            let forward = frame.pose.rotate(&Vector3::new(0.0, 0.0, 1.0));
            Ok(ScanView {
                cloud,
                origin: *frame.pose.translation(),
                heading: forward.z.atan2(forward.x),
            })
        })
        .collect::<Result<_>>()?;
    if views.iter().all(|v| v.cloud.is_empty()) {
        return Err(Error::EmptyObservation("every depth pixel is masked or invalid".to_string()));
    }

    let aligned = align_and_merge(&views, cfg.alignment_mode, &cfg.align, &cfg.ransac, seed)?;
    let origins: Vec<Vector3<f64>> = aligned.origins.iter().flatten().copied().collect();
    let origin3 = origins.iter().sum::<Vector3<f64>>() / origins.len().max(1) as f64;
    let scan_origin = Vector2::new(origin3.x, origin3.z);

    // Slice the wall band at the (scaled) camera height.
    let band = slice_band(&aligned.cloud, origin3.y, cfg.band_half_width)?;
    let band = filter_radius(&band, scan_origin, cfg.max_observation_radius);
    if band.is_empty() {
        return Err(Error::EmptyObservation("no points in the wall band".to_string()));
    }
    let raster = rasterize(&band, cfg.obs_resolution)?;
    let observed = extract_segments(&raster, &cfg.extract, seed);
    if observed.is_empty() {
        return Err(Error::EmptyObservation("no wall segments extracted from the band raster".to_string()));
    }

    let bin = cfg.hist_bin_deg.to_radians();
    let obs_hist = orientation_histogram(&observed, bin)?;
    let plan_hist = orientation_histogram(&plan.vector, bin)?;
    let count = orientations.unwrap_or(cfg.orientations);
    let thetas = candidate_orientations(&obs_hist, &plan_hist, count)?;

    let stack =
        compute_heatmaps(plan, &observed, scan_origin, &thetas, &cfg.scales, cfg.alpha, cfg.kernel_sigma)?;
    let pose = argmax_pose(&stack)?;
    let pdf = normalize_to_pdf(&stack);
    Ok(LocalizeOutcome {
        stack,
        pdf,
        pose,
        report: aligned.report,
        observed,
        scan_origin,
        candidate_thetas: thetas,
    })
}

/// Sequential tracking from a heatmap prior.
///
/// Odometry is resampled to the configured step length; estimates and
/// metrics are reported at the original step boundaries.
pub fn track(
    stack: &HeatmapStack,
    steps: &[OdometryStep],
    plan: &FloorPlan,
    params: &FilterParams,
    seed: u64,
    ground_truth: Option<&[PoseEstimate]>,
) -> Result<(Vec<PoseEstimate>, Option<TrajectoryMetrics>, RunFlags)> {
    if steps.is_empty() {
        return Err(Error::invalid("odometry holds no steps".to_string()));
    }
    if let Some(truth) = ground_truth {
        if truth.len() != steps.len() {
            return Err(Error::invalid(format!(
                "ground truth has {} poses for {} steps",
                truth.len(),
                steps.len()
            )));
        }
    }
    // Expand long steps, remembering where each original step ends.
    let mut expanded = Vec::new();
    let mut last_sub = Vec::with_capacity(steps.len());
    for s in steps {
        let pieces = filter::resample_odometry(std::slice::from_ref(s), params.step_length);
        expanded.extend(pieces);
        last_sub.push(expanded.len() - 1);
    }
    let (sub_estimates, _, flags) = filter::run_trajectory(stack, &expanded, plan, params, seed, None)?;
    let estimates: Vec<PoseEstimate> = last_sub.iter().map(|&i| sub_estimates[i]).collect();

    let metrics = ground_truth.map(|truth| {
        let errors: Vec<f64> =
            estimates.iter().zip(truth).map(|(e, t)| (e.position() - t.position()).norm()).collect();
        let take = errors.len().min(10);
        let last10 = &errors[errors.len() - take..];
        TrajectoryMetrics {
            rmse_last10: (last10.iter().map(|e| e * e).sum::<f64>() / take as f64).sqrt(),
            final_error: *errors.last().expect("non-empty"),
        }
    });
    Ok((estimates, metrics, flags))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    Kernel,
    Rays,
}

/// Layout-matcher evaluation on perfect observations: samples poses from
/// free space (with wall clearance), builds the error-free observation, runs
/// the chosen matcher, and scores argmax poses against the truth.
pub fn eval_match(
    plan: &FloorPlan,
    n_poses: usize,
    method: MatchMethod,
    cfg: &RunConfig,
    seed: u64,
    n_rays: usize,
    max_range: f64,
) -> Result<(EvalReport, Vec<(PoseEstimate, PoseEstimate)>)> {
    if n_poses == 0 {
        return Err(Error::invalid("eval needs at least one pose".to_string()));
    }
    let poses = sample_poses(plan, n_poses, seed, 0.3)?;

    let pairs: Vec<(PoseEstimate, PoseEstimate)> = match method {
        MatchMethod::Kernel => {
            let plan_hist = orientation_histogram(&plan.vector, cfg.hist_bin_deg.to_radians())?;
            poses
                .par_iter()
                .map(|truth| {
                    let pred = kernel_predict(plan, &plan_hist, truth, cfg, max_range)
                        .unwrap_or_else(|_| far_corner(plan));
                    (pred, *truth)
                })
                .collect()
        }
        MatchMethod::Rays => {
            let field = build_distance_field(plan, n_rays, max_range);
            let thetas: Vec<f64> =
                (0..36).map(|i| i as f64 * std::f64::consts::TAU / 36.0).collect();
            poses
                .par_iter()
                .map(|truth| {
                    let pred = ray_cast(plan, truth, n_rays, max_range)
                        .and_then(|scan| ray_match(plan, &field, &scan, &thetas))
                        .and_then(|stack| argmax_pose(&stack))
                        .unwrap_or_else(|_| far_corner(plan));
                    (pred, *truth)
                })
                .collect()
        }
    };
    let preds: Vec<PoseEstimate> = pairs.iter().map(|(p, _)| *p).collect();
    let truths: Vec<PoseEstimate> = pairs.iter().map(|(_, t)| *t).collect();
    Ok((evaluate(&preds, &truths)?, pairs))
}

fn kernel_predict(
    plan: &FloorPlan,
    plan_hist: &crate::matching::OrientationHistogram,
    truth: &PoseEstimate,
    cfg: &RunConfig,
    max_range: f64,
) -> Result<PoseEstimate> {
    let obs = perfect_segments(plan, truth, max_range)?;
    if obs.is_empty() {
        return Err(Error::EmptyObservation("no visible walls".to_string()));
    }
    let obs_hist = orientation_histogram(&obs, cfg.hist_bin_deg.to_radians())?;
    let thetas = candidate_orientations(&obs_hist, plan_hist, cfg.orientations)?;
    let stack = compute_heatmaps(
        plan,
        &obs,
        Vector2::zeros(),
        &thetas,
        &cfg.scales,
        cfg.alpha,
        cfg.kernel_sigma,
    )?;
    argmax_pose(&stack)
}

/// A deliberately wrong pose for failed predictions, so they count as
/// misses rather than vanish from the metrics.
fn far_corner(plan: &FloorPlan) -> PoseEstimate {
    let (lo, _) = plan.walls.bounds();
    PoseEstimate::new(lo.x - 100.0, lo.y - 100.0, 0.0, f64::NEG_INFINITY)
}

/// Uniformly samples poses over traversable cells at least `clearance`
/// meters from any wall cell; headings uniform over [0, 2π).
pub fn sample_poses(plan: &FloorPlan, n: usize, seed: u64, clearance: f64) -> Result<Vec<PoseEstimate>> {
    let margin = (clearance / plan.resolution()).ceil() as i64;
    let cells = plan.traversable_cells();
    let clear: Vec<(usize, usize)> = cells
        .into_iter()
        .filter(|&(ix, iy)| {
            for dy in -margin..=margin {
                for dx in -margin..=margin {
                    let (x, y) = (ix as i64 + dx, iy as i64 + dy);
                    if x < 0 || y < 0 || x as usize >= plan.walls.width || y as usize >= plan.walls.height {
                        return false;
                    }
                    if plan.walls.get(x as usize, y as usize) > 0.0 {
                        return false;
                    }
                }
            }
            true
        })
        .collect();
    if clear.is_empty() {
        return Err(Error::invalid("plan has no traversable space with the required clearance".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let (ix, iy) = clear[rng.random_range(0..clear.len())];
            let c = plan.walls.cell_center(ix, iy);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            PoseEstimate::new(c.x, c.y, theta, 0.0)
        })
        .collect())
}

/// A complete synthetic scenario: plan, rendered scan bundle, and a wander
/// trajectory with ground truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plan: FloorPlan,
    pub bundle: ObservationBundle,
    pub scan_pose: PoseEstimate,
    pub odometry: Vec<OdometryStep>,
    pub truth: Vec<PoseEstimate>,
}

/// Generates a floor plan, renders a rotational scan somewhere inside it,
/// and wanders a trajectory from the scan pose. Deterministic per seed.
pub fn gen_scenario(
    seed: u64,
    plan_spec: &PlanSpec,
    scan_spec: &ScanSpec,
    n_steps: usize,
    step_length: f64,
) -> Result<Scenario> {
    let plan = gen_floorplan(seed, plan_spec)?;
    let scan_pose = sample_poses(&plan, 1, seed ^ 0x5ca1_ab1e, 0.5)?[0];
    let views = render_scan(&plan, scan_pose.position(), scan_pose.theta, scan_spec)?;
    let bundle = ObservationBundle {
        frames: views
            .into_iter()
            .map(|v| Frame { depth: v.depth, intrinsics: v.intrinsics, pose: v.pose })
            .collect(),
    };

    // Random wander with wall avoidance. Odometry is expressed in the scan's
    // own frame (heading relative to the tracking frame), so the first
    // heading change is relative to heading 0, matching how the particle
    // filter consumes it together with the heatmap prior.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0d0_77e1);
    let mut odometry = Vec::with_capacity(n_steps);
    let mut truth = Vec::with_capacity(n_steps);
    let mut pose = scan_pose;
    for _ in 0..n_steps {
        let mut placed = false;
        let mut extra_turn = 0.0f64;
        for _attempt in 0..36 {
            let dh: f64 = rng.random_range(-0.6..0.6) + extra_turn;
            let theta = pose.theta + dh;
            let target = Vector2::new(
                pose.x + step_length * theta.cos(),
                pose.y + step_length * theta.sin(),
            );
            if plan.move_is_free(&pose.position(), &target) {
                odometry.push(OdometryStep { forward: step_length, heading: dh });
                pose = PoseEstimate::new(target.x, target.y, theta, 1.0);
                truth.push(pose);
                placed = true;
                break;
            }
            // Blocked: fold an extra in-place turn into the next attempt.
            extra_turn += rng.random_range(0.5..1.2);
        }
        if !placed {
            odometry.push(OdometryStep { forward: 0.0, heading: 0.3 });
            pose = PoseEstimate::new(pose.x, pose.y, pose.theta + 0.3, 1.0);
            truth.push(pose);
        }
    }
    Ok(Scenario { plan, bundle, scan_pose, odometry, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_poses_are_clear_of_walls() {
        let plan = gen_floorplan(5, &PlanSpec::default()).unwrap();
        let poses = sample_poses(&plan, 40, 9, 0.3).unwrap();
        for p in &poses {
            assert!(plan.is_traversable(&p.position()));
        }
    }

    #[test]
    fn scenario_is_deterministic_and_consistent() {
        let spec = PlanSpec::default();
        let scan = ScanSpec { image_width: 64, image_height: 48, ..Default::default() };
        let a = gen_scenario(11, &spec, &scan, 25, 0.5).unwrap();
        let b = gen_scenario(11, &spec, &scan, 25, 0.5).unwrap();
        assert_eq!(a.scan_pose, b.scan_pose);
        assert_eq!(a.odometry, b.odometry);
        assert_eq!(a.bundle.frames[0].depth, b.bundle.frames[0].depth);
        assert_eq!(a.odometry.len(), a.truth.len());
        // Truth poses stay inside free space.
        for t in &a.truth {
            assert!(a.plan.is_traversable(&t.position()), "{t:?} escaped");
        }
        // Dead-reckoning the odometry from the scan pose reproduces truth.
        let mut pose = (a.scan_pose.x, a.scan_pose.y, a.scan_pose.theta);
        for (step, t) in a.odometry.iter().zip(&a.truth) {
            pose.2 += step.heading;
            pose.0 += step.forward * pose.2.cos();
            pose.1 += step.forward * pose.2.sin();
            assert!((pose.0 - t.x).abs() < 1e-9 && (pose.1 - t.y).abs() < 1e-9);
        }
    }
}
