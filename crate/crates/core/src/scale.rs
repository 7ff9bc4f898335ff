//! Per-view scale correction for monocular point clouds.
//!
//! A rotational scan yields one cloud per view, each off by an unknown
//! multiplicative depth error. Relative scales are recovered by minimizing a
//! weighted nearest-neighbor distance summed over overlapping (consecutive)
//! view pairs, with view 0 as the reference; absolute scale is then fixed by
//! detecting the ground plane and assigning the camera a canonical height
//! above it.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{scale as scale_cloud, Plane3, PointCloud};
use crate::optim::{self, Options};
use crate::spatial::KdTree3;

/// Point budget per cloud inside the nearest-neighbor objective.
const MAX_NN_POINTS: usize = 5000;

/// How the per-view scales are estimated before merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    /// Merge the clouds as-is.
    None,
    /// Scale each view from its own detected ground plane; drop views
    /// without one.
    Ground,
    /// Joint relative-scale optimization over overlapping pairs, then one
    /// global ground-plane scaling of the merged cloud.
    Full,
}

/// Result of the joint relative-scale optimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleSolution {
    /// One factor per view; `lambdas[0]` is exactly 1.
    pub lambdas: Vec<f64>,
    /// Final value of the summed pair objective.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignParams {
    pub bounds: (f64, f64),
    pub max_iters: usize,
    pub tol: f64,
    pub fd_step: f64,
    /// Point budget per overlap sub-cloud inside the pair objective.
    pub max_points: usize,
    /// Canonical camera height above the detected ground plane (meters).
    pub canonical_height: f64,
    /// Minimum angular coverage (radians) before the wrap-around pair
    /// (last, first) is added.
    pub wraparound_min_span: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            bounds: (0.25, 4.0),
            max_iters: 100,
            tol: 1e-6,
            fd_step: 1e-3,
            max_points: 5000,
            canonical_height: 1.5,
            wraparound_min_span: 300f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier distance threshold (meters).
    pub inlier_threshold: f64,
    /// Minimum inlier fraction for a plane to count as found.
    pub min_inlier_fraction: f64,
    /// Max angle (radians) between the plane normal and the gravity axis.
    pub max_tilt: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold: 0.05,
            min_inlier_fraction: 0.15,
            max_tilt: 20f64.to_radians(),
        }
    }
}

/// One view of a stationary scan, already posed in the common frame.
#[derive(Debug, Clone)]
pub struct ScanView {
    pub cloud: PointCloud,
    /// Camera origin in the common frame.
    pub origin: Vector3<f64>,
    /// In-plane heading of the optical axis (radians).
    pub heading: f64,
}

/// Everything `align_and_merge` decided, for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleReport {
    pub mode: AlignmentMode,
    pub relative: Option<ScaleSolution>,
    /// Per input view: the ground-derived scale (Ground mode).
    pub ground_scales: Vec<Option<f64>>,
    /// Final global scale applied to the merged cloud (Full mode).
    pub global_scale: Option<f64>,
    /// Ground plane of the final (scaled) cloud as (normal, offset).
    pub ground_plane: Option<([f64; 3], f64)>,
    /// Per input view: whether it contributed to the merge.
    pub retained: Vec<bool>,
}

/// Merged, scale-corrected cloud plus the surviving camera origins.
#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub cloud: PointCloud,
    /// Per input view: the (scaled) camera origin, `None` if discarded.
    pub origins: Vec<Option<Vector3<f64>>>,
    pub report: ScaleReport,
}

fn subsample(points: &[Vector3<f64>], budget: usize) -> Vec<Vector3<f64>> {
    if points.len() <= budget {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(budget);
    points.iter().step_by(stride).copied().collect()
}

/// Weighted mean nearest-neighbor distance from `p` into `q` (asymmetric).
///
/// Each raw NN distance is divided by `1 +` its min-max normalization over
/// all query points, down-weighting large residuals. When all distances are
/// equal the normalization term is defined as 0 and the value reduces to the
/// plain mean.
pub fn nn_distance(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("nn_distance requires non-empty clouds".to_string()));
    }
    let p_sub = subsample(&p.points, MAX_NN_POINTS);
    let q_sub = subsample(&q.points, MAX_NN_POINTS);
    let tree = KdTree3::build(&q_sub);
    let dists: Vec<f64> = p_sub.iter().map(|pt| tree.nearest_distance(pt)).collect();
    Ok(weighted_mean(&dists))
}

fn weighted_mean(dists: &[f64]) -> f64 {
    let lo = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let n = dists.len() as f64;
    if span <= 0.0 {
        return dists.iter().sum::<f64>() / n;
    }
    dists.iter().map(|&d| d / ((d - lo) / span + 1.0)).sum::<f64>() / n
}

/// Jointly recovers per-view scale factors over the given overlapping pairs.
///
/// `pairs` holds 0-based view indices; view 0 is the fixed reference with
/// scale 1. Each pair is scored on its overlap sub-clouds: the angular
/// sector (about the scan origin) that both views cover. Scaling preserves
/// directions from the origin, so the sub-clouds are computed once. Uses a
/// bound-constrained limited-memory quasi-Newton method with
/// central-difference gradients; non-convergence returns the best iterate
/// with `converged = false` rather than an error.
pub fn optimize_scales(
    clouds: &[PointCloud],
    pairs: &[(usize, usize)],
    bounds: (f64, f64),
) -> Result<ScaleSolution> {
    optimize_scales_with(clouds, pairs, &AlignParams { bounds, ..AlignParams::default() }, None)
}

/// One directional term of a pair objective: weighted NN distances of the
/// (scaled) query sub-cloud into the (scaled) target sub-cloud's tree.
struct SideCost {
    /// Variable index of the query cloud (its scale multiplies the queries).
    m: usize,
    /// Variable index of the target cloud.
    k: usize,
    queries: Vec<Vector3<f64>>,
    tree: KdTree3,
}

impl SideCost {
    fn eval(&self, lam_m: f64, lam_k: f64) -> f64 {
        let ratio = lam_m / lam_k;
        let dists: Vec<f64> =
            self.queries.par_iter().map(|p| lam_k * self.tree.nearest_distance(&(p * ratio))).collect();
        weighted_mean(&dists)
    }
}

fn horizontal_angle(p: &Vector3<f64>, origin: Vector2<f64>) -> f64 {
    (p.z - origin.y).atan2(p.x - origin.x).rem_euclid(std::f64::consts::TAU)
}

/// Circular angular hull (start, width) of a cloud about the scan origin:
/// the complement of the largest gap between consecutive point angles.
fn angular_sector(cloud: &PointCloud, origin: Vector2<f64>) -> (f64, f64) {
    let tau = std::f64::consts::TAU;
    let mut angles: Vec<f64> = cloud.points.iter().map(|p| horizontal_angle(p, origin)).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut gap_start = *angles.last().expect("non-empty cloud");
    let mut max_gap = tau - (angles.last().unwrap() - angles[0]);
    for w in angles.windows(2) {
        if w[1] - w[0] > max_gap {
            max_gap = w[1] - w[0];
            gap_start = w[0];
        }
    }
    ((gap_start + max_gap).rem_euclid(tau), tau - max_gap)
}

fn in_sector(angle: f64, sector: (f64, f64)) -> bool {
    (angle - sector.0).rem_euclid(std::f64::consts::TAU) <= sector.1 + 1e-9
}

/// Builds both directional side costs for every pair with usable overlap.
fn build_sides(
    clouds: &[PointCloud],
    pairs: &[(usize, usize)],
    origin: Vector2<f64>,
    max_points: usize,
) -> Vec<SideCost> {
    let sectors: Vec<(f64, f64)> = clouds.iter().map(|c| angular_sector(c, origin)).collect();
    let overlap = |of: usize, within: usize| -> Vec<Vector3<f64>> {
        let pts: Vec<Vector3<f64>> = clouds[of]
            .points
            .iter()
            .filter(|p| in_sector(horizontal_angle(p, origin), sectors[within]))
            .copied()
            .collect();
        subsample(&pts, max_points)
    };
    let mut sides = Vec::new();
    for &(m, k) in pairs {
        let pm = overlap(m, k);
        let pk = overlap(k, m);
        if pm.len() < 20 || pk.len() < 20 {
            continue; // no usable overlap between these views
        }
        sides.push(SideCost { m, k, queries: pm.clone(), tree: KdTree3::build(&pk) });
        sides.push(SideCost { m: k, k: m, queries: pk, tree: KdTree3::build(&pm) });
    }
    sides
}

/// The pair objective held ready for repeated evaluation (sub-clouds and
/// trees are built once); grid-search oracles call this many times.
pub struct PreparedObjective {
    sides: Vec<SideCost>,
    n_views: usize,
}

impl PreparedObjective {
    pub fn new(
        clouds: &[PointCloud],
        pairs: &[(usize, usize)],
        scan_origin: Option<Vector2<f64>>,
        params: &AlignParams,
    ) -> Self {
        let origin = scan_origin.unwrap_or_else(|| default_origin(clouds));
        Self { sides: build_sides(clouds, pairs, origin, params.max_points), n_views: clouds.len() }
    }

    /// Objective value at a full scale vector (`lambdas[0]` included).
    pub fn eval(&self, lambdas: &[f64]) -> f64 {
        assert_eq!(lambdas.len(), self.n_views);
        self.sides.iter().map(|s| s.eval(lambdas[s.m], lambdas[s.k])).sum()
    }

    /// As [`eval`](Self::eval) but only over the terms view `view` touches —
    /// the part of the objective that varies along that coordinate.
    pub fn eval_touching(&self, view: usize, lambdas: &[f64]) -> f64 {
        assert_eq!(lambdas.len(), self.n_views);
        self.sides
            .iter()
            .filter(|s| s.m == view || s.k == view)
            .map(|s| s.eval(lambdas[s.m], lambdas[s.k]))
            .sum()
    }
}

/// The summed pair objective at a given scale vector (`lambdas[0]` is the
/// reference). Exposed so tests can grid-search the same landscape the
/// optimizer descends.
pub fn alignment_objective(
    clouds: &[PointCloud],
    pairs: &[(usize, usize)],
    scan_origin: Option<Vector2<f64>>,
    params: &AlignParams,
    lambdas: &[f64],
) -> Result<f64> {
    if lambdas.len() != clouds.len() {
        return Err(Error::invalid(format!("{} lambdas for {} clouds", lambdas.len(), clouds.len())));
    }
    Ok(PreparedObjective::new(clouds, pairs, scan_origin, params).eval(lambdas))
}

fn default_origin(clouds: &[PointCloud]) -> Vector2<f64> {
    let mut acc = Vector2::zeros();
    let mut n = 0usize;
    for c in clouds {
        for p in &c.points {
            acc += Vector2::new(p.x, p.z);
            n += 1;
        }
    }
    if n == 0 {
        Vector2::zeros()
    } else {
        acc / n as f64
    }
}

pub fn optimize_scales_with(
    clouds: &[PointCloud],
    pairs: &[(usize, usize)],
    params: &AlignParams,
    scan_origin: Option<Vector2<f64>>,
) -> Result<ScaleSolution> {
    let n = clouds.len();
    if n == 0 || clouds.iter().any(|c| c.is_empty()) {
        return Err(Error::invalid("optimize_scales requires non-empty clouds".to_string()));
    }
    for &(m, k) in pairs {
        if m >= n || k >= n {
            return Err(Error::invalid(format!("pair ({m}, {k}) out of range for {n} clouds")));
        }
    }
    let (lo, hi) = params.bounds;
    if !(0.0 < lo && lo < 1.0 && 1.0 < hi) {
        return Err(Error::invalid(format!("scale bounds must satisfy 0 < lo < 1 < hi, got ({lo}, {hi})")));
    }
    if n == 1 || pairs.is_empty() {
        return Ok(ScaleSolution { lambdas: vec![1.0; n], objective: 0.0, iterations: 0, converged: true });
    }

    let origin = scan_origin.unwrap_or_else(|| default_origin(clouds));
    let sides = build_sides(clouds, pairs, origin, params.max_points);
    if sides.is_empty() {
        return Ok(ScaleSolution { lambdas: vec![1.0; n], objective: 0.0, iterations: 0, converged: false });
    }
    // Which sides each variable touches (variable i ↔ view i+1).
    let touches: Vec<Vec<usize>> = (1..n)
        .map(|view| {
            sides
                .iter()
                .enumerate()
                .filter(|(_, s)| s.m == view || s.k == view)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let lambda_of = |x: &[f64], view: usize| if view == 0 { 1.0 } else { x[view - 1] };
    let objective = |x: &[f64]| -> f64 {
        sides.iter().map(|s| s.eval(lambda_of(x, s.m), lambda_of(x, s.k))).sum()
    };
    // Central differences, recomputing only the sides the coordinate touches.
    let gradient = |x: &[f64]| -> Vec<f64> {
        let h = params.fd_step;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                xp[i] += h;
                let mut xm = x.to_vec();
                xm[i] -= h;
                let mut delta = 0.0;
                for &si in &touches[i] {
                    let s = &sides[si];
                    delta += s.eval(lambda_of(&xp, s.m), lambda_of(&xp, s.k))
                        - s.eval(lambda_of(&xm, s.m), lambda_of(&xm, s.k));
                }
                delta / (2.0 * h)
            })
            .collect()
    };

    // Primary start: a greedy chain walk that grid-solves each consecutive
    // ratio with the previous view fixed (the NN landscape has local basins
    // that strand a far-off joint descent). The plain all-ones start is the
    // fallback when the polished chain result looks stuck.
    let chain = chain_init(&sides, n, (lo, hi));
    let opts = Options { max_iters: params.max_iters, tol: params.tol, fd_step: params.fd_step, memory: 8 };
    let bounds_lo = vec![lo; n - 1];
    let bounds_hi = vec![hi; n - 1];
    let mut result = optim::minimize_bounded_with_grad(&objective, &gradient, &chain, &bounds_lo, &bounds_hi, &opts);
    let mut total_iterations = result.iterations;
    let pinned = result.x.iter().any(|&v| v <= lo + 1e-9 || v >= hi - 1e-9);
    if !result.converged || pinned {
        let retry =
            optim::minimize_bounded_with_grad(&objective, &gradient, &vec![1.0; n - 1], &bounds_lo, &bounds_hi, &opts);
        total_iterations += retry.iterations;
        if retry.objective < result.objective {
            result = retry;
        }
    }

    let mut lambdas = Vec::with_capacity(n);
    lambdas.push(1.0);
    lambdas.extend_from_slice(&result.x);
    Ok(ScaleSolution {
        lambdas,
        objective: result.objective,
        iterations: total_iterations,
        converged: result.converged,
    })
}

/// Greedy initialization: λ[i] from a log-spaced grid minimizing the sides
/// that connect view i to already-fixed views (processed in index order).
fn chain_init(sides: &[SideCost], n: usize, bounds: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = bounds;
    let mut lambdas = vec![1.0; n];
    for view in 1..n {
        let connected: Vec<&SideCost> = sides
            .iter()
            .filter(|s| {
                (s.m == view && s.k < view) || (s.k == view && s.m < view)
            })
            .collect();
        if connected.is_empty() {
            continue;
        }
        let mut best = (f64::INFINITY, 1.0);
        let steps = 60;
        for t in 0..=steps {
            let lam = lo * (hi / lo).powf(t as f64 / steps as f64);
            let cost: f64 = connected
                .iter()
                .map(|s| {
                    let lam_m = if s.m == view { lam } else { lambdas[s.m] };
                    let lam_k = if s.k == view { lam } else { lambdas[s.k] };
                    s.eval(lam_m, lam_k)
                })
                .sum();
            if cost < best.0 {
                best = (cost, lam);
            }
        }
        lambdas[view] = best.1;
    }
    lambdas[1..].to_vec()
}

/// RANSAC plane fit restricted to near-horizontal candidates.
///
/// Returns the plane with the most inliers (refined by PCA on its inliers)
/// and the inlier count, or `None` when the best inlier fraction stays below
/// the configured minimum. The normal is oriented along +y.
pub fn detect_ground_plane(
    cloud: &PointCloud,
    seed: u64,
    params: &RansacParams,
) -> Result<Option<(Plane3, usize)>> {
    if cloud.len() < 3 {
        return Err(Error::invalid(format!("ground detection needs >= 3 points, got {}", cloud.len())));
    }
    let pts = subsample(&cloud.points, 30_000);
    let n = pts.len();
    let gravity = Vector3::new(0.0, 1.0, 0.0);
    let cos_gate = params.max_tilt.cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Plane3, usize)> = None;

    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let normal = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
        if normal.norm() < 1e-12 {
            continue;
        }
        let plane = match Plane3::from_unnormalized(normal, &pts[i]) {
            Ok(p) => p.oriented_along(&gravity),
            Err(_) => continue,
        };
        if plane.normal().dot(&gravity) < cos_gate {
            continue;
        }
        let inliers = pts.iter().filter(|p| plane.signed_distance(p).abs() <= params.inlier_threshold).count();
        if best.as_ref().map_or(true, |(_, c)| inliers > *c) {
            best = Some((plane, inliers));
        }
    }

    let Some((coarse, count)) = best else { return Ok(None) };
    if (count as f64) < params.min_inlier_fraction * n as f64 {
        return Ok(None);
    }

    // PCA refinement on the inlier set; keep the coarse plane if refinement
    // tips the normal past the tilt gate.
    let inliers: Vec<Vector3<f64>> =
        pts.iter().filter(|p| coarse.signed_distance(p).abs() <= params.inlier_threshold).copied().collect();
    let refined = fit_plane_pca(&inliers).map(|p| p.oriented_along(&gravity));
    let plane = match refined {
        Some(p) if p.normal().dot(&gravity) >= cos_gate => {
            let recount = pts.iter().filter(|q| p.signed_distance(q).abs() <= params.inlier_threshold).count();
            if recount >= count {
                return Ok(Some((p, recount)));
            }
            coarse
        }
        _ => coarse,
    };
    Ok(Some((plane, count)))
}

fn fit_plane_pca(points: &[Vector3<f64>]) -> Option<Plane3> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal = eig.eigenvectors.column(min_idx).into_owned();
    Plane3::from_unnormalized(normal, &centroid).ok()
}

/// Scale that puts `camera_origin` at `canonical_height` above the plane.
pub fn global_scale_from_ground(
    plane: &Plane3,
    camera_origin: &Vector3<f64>,
    canonical_height: f64,
) -> Result<f64> {
    let dist = plane.signed_distance(camera_origin).abs();
    if dist < 1e-6 {
        return Err(Error::degenerate("camera lies on the ground plane".to_string()));
    }
    Ok(canonical_height / dist)
}

/// Aligns and merges a scan's views according to `mode`.
pub fn align_and_merge(
    views: &[ScanView],
    mode: AlignmentMode,
    align: &AlignParams,
    ransac: &RansacParams,
    seed: u64,
) -> Result<AlignmentOutcome> {
    if views.is_empty() {
        return Err(Error::invalid("align_and_merge requires at least one view".to_string()));
    }
    let n = views.len();
    let mut report = ScaleReport {
        mode,
        relative: None,
        ground_scales: vec![None; n],
        global_scale: None,
        ground_plane: None,
        retained: vec![false; n],
    };

    match mode {
        AlignmentMode::None => {
            let mut points = Vec::new();
            let mut origins = Vec::with_capacity(n);
            for (i, v) in views.iter().enumerate() {
                points.extend_from_slice(&v.cloud.points);
                origins.push(Some(v.origin));
                report.retained[i] = true;
            }
            Ok(AlignmentOutcome { cloud: PointCloud::new(points), origins, report })
        }
        AlignmentMode::Ground => {
            let planes: Vec<Option<(Plane3, usize)>> = views
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let below = ground_candidates(&v.cloud, v.origin.y);
                    if below.len() < 3 {
                        Ok(None)
                    } else {
                        detect_ground_plane(&below, seed.wrapping_add(i as u64), ransac)
                    }
                })
                .collect::<Result<_>>()?;
            let mut points = Vec::new();
            let mut origins = vec![None; n];
            for (i, v) in views.iter().enumerate() {
                let Some((plane, _)) = &planes[i] else { continue };
                let Ok(s) = global_scale_from_ground(plane, &v.origin, align.canonical_height) else {
                    continue;
                };
                report.ground_scales[i] = Some(s);
                report.retained[i] = true;
                points.extend(scale_cloud(&v.cloud, s)?.points);
                origins[i] = Some(v.origin * s);
            }
            if points.is_empty() {
                return Err(Error::degenerate(
                    "no view exposes a detectable ground plane; cannot fix scale".to_string(),
                ));
            }
            Ok(AlignmentOutcome { cloud: PointCloud::new(points), origins, report })
        }
        AlignmentMode::Full => {
            let usable: Vec<usize> = (0..n).filter(|&i| !views[i].cloud.is_empty()).collect();
            if usable.is_empty() {
                return Err(Error::invalid("all views are empty".to_string()));
            }
            let clouds: Vec<PointCloud> = usable.iter().map(|&i| views[i].cloud.clone()).collect();
            let mut pairs: Vec<(usize, usize)> = (0..clouds.len().saturating_sub(1)).map(|i| (i, i + 1)).collect();
            let span = angular_span(&usable.iter().map(|&i| views[i].heading).collect::<Vec<_>>());
            if clouds.len() > 2 && span >= align.wraparound_min_span - 1e-9 {
                pairs.push((clouds.len() - 1, 0));
            }
            let center0: Vector3<f64> =
                usable.iter().map(|&i| views[i].origin).sum::<Vector3<f64>>() / usable.len() as f64;
            let solution =
                optimize_scales_with(&clouds, &pairs, align, Some(Vector2::new(center0.x, center0.z)))?;

            let mut points = Vec::new();
            let mut origins = vec![None; n];
            let mut scaled_origins = Vec::new();
            for (slot, &i) in usable.iter().enumerate() {
                let lambda = solution.lambdas[slot];
                points.extend(scale_cloud(&views[i].cloud, lambda)?.points);
                let o = views[i].origin * lambda;
                origins[i] = Some(o);
                scaled_origins.push(o);
                report.retained[i] = true;
            }
            report.relative = Some(solution);

            let merged = PointCloud::new(points);
            let center = scaled_origins.iter().sum::<Vector3<f64>>() / scaled_origins.len() as f64;
            let below = ground_candidates(&merged, center.y);
            if below.len() < 3 {
                return Err(Error::degenerate("merged cloud exposes no detectable ground plane".to_string()));
            }
            let plane = detect_ground_plane(&below, seed, ransac)?.ok_or_else(|| {
                Error::degenerate("merged cloud exposes no detectable ground plane".to_string())
            })?;
            let g = global_scale_from_ground(&plane.0, &center, align.canonical_height)?;
            report.global_scale = Some(g);
            let n_vec = plane.0.normal();
            report.ground_plane = Some(([n_vec.x, n_vec.y, n_vec.z], plane.0.offset() * g));

            let cloud = scale_cloud(&merged, g)?;
            for o in origins.iter_mut().flatten() {
                *o *= g;
            }
            Ok(AlignmentOutcome { cloud, origins, report })
        }
    }
}

/// Points below the camera height (+y is down): the ground-candidate
/// subset a ground-plane fit should see. Ceilings otherwise outvote floors
/// in wall-dominated scans.
fn ground_candidates(cloud: &PointCloud, camera_y: f64) -> PointCloud {
    PointCloud::new(cloud.points.iter().filter(|p| p.y > camera_y).copied().collect())
}

/// Total angular coverage of a set of headings: 2π minus the largest gap.
fn angular_span(headings: &[f64]) -> f64 {
    if headings.len() < 2 {
        return 0.0;
    }
    let tau = std::f64::consts::TAU;
    let mut angles: Vec<f64> = headings.iter().map(|h| h.rem_euclid(tau)).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut max_gap: f64 = 0.0;
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    max_gap = max_gap.max(tau - (angles.last().unwrap() - angles[0]));
    tau - max_gap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{transform, Pose3};
    use nalgebra::Vector3;

    fn ring_cloud(n: usize, radius: f64, arc: (f64, f64), seed: u64) -> PointCloud {
        // Points on the walls of a cylindrical "room", banded in height.
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let pts = (0..n)
            .map(|_| {
                let a = arc.0 + (arc.1 - arc.0) * next();
                let y = next() * 2.0 - 1.0;
                Vector3::new(radius * a.cos(), y, radius * a.sin())
            })
            .collect();
        PointCloud::new(pts)
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let c = ring_cloud(400, 3.0, (0.0, 6.28), 1);
        assert!(nn_distance(&c, &c).unwrap() < 1e-12);
    }

    #[test]
    fn hand_computed_weighted_mean() {
        // NN distances 1 and 3 normalize to {0, 1}: (1/1 + 3/2) / 2 = 1.25.
        let p = PointCloud::new(vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 10.0)]);
        let q = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 3.0, 10.0)]);
        let d = nn_distance(&p, &q).unwrap();
        assert!((d - 1.25).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn single_point_uses_degenerate_normalization() {
        let p = PointCloud::new(vec![Vector3::zeros()]);
        let q = PointCloud::new(vec![Vector3::new(0.7, 0.0, 0.0)]);
        assert!((nn_distance(&p, &q).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_cloud_is_an_input_error() {
        let c = ring_cloud(10, 1.0, (0.0, 1.0), 2);
        assert!(nn_distance(&PointCloud::default(), &c).is_err());
        assert!(nn_distance(&c, &PointCloud::default()).is_err());
    }

    #[test]
    fn nn_distance_rigid_invariance() {
        let p = ring_cloud(300, 3.0, (0.0, 3.0), 3);
        let q = ring_cloud(300, 3.0, (0.5, 3.5), 4);
        let base = nn_distance(&p, &q).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
        let pose = Pose3::new(rot, Vector3::new(4.0, -2.0, 0.5)).unwrap();
        let moved = nn_distance(&transform(&p, &pose), &transform(&q, &pose)).unwrap();
        assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");
    }

    #[test]
    fn identical_pair_optimizes_to_unity() {
        let c = ring_cloud(500, 3.0, (0.0, 6.28), 5);
        let sol = optimize_scales(&[c.clone(), c], &[(0, 1)], (0.25, 4.0)).unwrap();
        assert!((sol.lambdas[1] - 1.0).abs() < 1e-3, "{:?}", sol.lambdas);
        assert_eq!(sol.lambdas[0], 1.0);
    }

    #[test]
    fn halved_view_recovers_factor_two() {
        let full = ring_cloud(800, 3.0, (0.0, 6.28), 6);
        let halved = scale_cloud(&full, 0.5).unwrap();
        let clouds = [full, halved];
        let sol = optimize_scales(&clouds, &[(0, 1)], (0.25, 4.0)).unwrap();
        assert!((sol.lambdas[1] - 2.0).abs() / 2.0 < 0.02, "λ₂ = {}", sol.lambdas[1]);

        // Independent oracle: 1-D grid search of the pair objective over λ₂.
        let mut best = (f64::INFINITY, 0.0);
        let mut lam = 0.25;
        while lam <= 4.0 {
            let scaled = scale_cloud(&clouds[1], lam).unwrap();
            let f = nn_distance(&clouds[0], &scaled).unwrap() + nn_distance(&scaled, &clouds[0]).unwrap();
            if f < best.0 {
                best = (f, lam);
            }
            lam += 0.001;
        }
        assert!((best.1 - 2.0).abs() / 2.0 < 0.02, "grid optimum {}", best.1);
        assert!((sol.lambdas[1] - best.1).abs() / best.1 < 0.01, "optimizer {} vs grid {}", sol.lambdas[1], best.1);
    }

    #[test]
    fn three_views_with_overlap() {
        // True scales (1.0, 1.3, 0.8): the optimizer should undo them
        // relative to view 0.
        // Consecutive views share ~54% of their arc, the regime a dense
        // rotational scan produces.
        let arcs = [(0.0, 2.6), (1.2, 3.8), (2.4, 5.0)];
        let true_scales = [1.0, 1.3, 0.8];
        let clouds: Vec<PointCloud> = arcs
            .iter()
            .zip(true_scales)
            .enumerate()
            .map(|(i, (&arc, s))| scale_cloud(&ring_cloud(700, 3.0, arc, 10 + i as u64), s).unwrap())
            .collect();
        let pairs = [(0usize, 1usize), (1, 2)];
        let sol = optimize_scales(&clouds, &pairs, (0.25, 4.0)).unwrap();
        for i in 1..3 {
            let expect = true_scales[0] / true_scales[i];
            let rel = (sol.lambdas[i] - expect).abs() / expect;
            assert!(rel < 0.03, "λ{} = {}, expected {}", i + 1, sol.lambdas[i], expect);
        }

        // Two-stage 2-D grid oracle around the box.
        let objective = |l2: f64, l3: f64| -> f64 {
            let c2 = scale_cloud(&clouds[1], l2).unwrap();
            let c3 = scale_cloud(&clouds[2], l3).unwrap();
            nn_distance(&clouds[0], &c2).unwrap()
                + nn_distance(&c2, &clouds[0]).unwrap()
                + nn_distance(&c2, &c3).unwrap()
                + nn_distance(&c3, &c2).unwrap()
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=30 {
            for j in 0..=30 {
                let l2 = 0.25 + i as f64 * 0.125;
                let l3 = 0.25 + j as f64 * 0.125;
                let f = objective(l2, l3);
                if f < best.0 {
                    best = (f, l2, l3);
                }
            }
        }
        let coarse = best;
        for i in -15..=15 {
            for j in -15..=15 {
                let l2 = (coarse.1 + i as f64 * 0.01).clamp(0.25, 4.0);
                let l3 = (coarse.2 + j as f64 * 0.01).clamp(0.25, 4.0);
                let f = objective(l2, l3);
                if f < best.0 {
                    best = (f, l2, l3);
                }
            }
        }
        assert!((sol.lambdas[1] - best.1).abs() < 0.05, "optimizer {} vs grid {}", sol.lambdas[1], best.1);
        assert!((sol.lambdas[2] - best.2).abs() < 0.05, "optimizer {} vs grid {}", sol.lambdas[2], best.2);
    }

    #[test]
    fn objective_not_worse_than_all_ones() {
        let a = ring_cloud(400, 3.0, (0.0, 3.5), 21);
        let b = scale_cloud(&ring_cloud(400, 3.0, (3.0, 6.4), 22), 1.4).unwrap();
        let clouds = [a, b];
        let pairs = [(0usize, 1usize)];
        let sol = optimize_scales(&clouds, &pairs, (0.25, 4.0)).unwrap();
        let at_ones =
            nn_distance(&clouds[0], &clouds[1]).unwrap() + nn_distance(&clouds[1], &clouds[0]).unwrap();
        assert!(sol.objective <= at_ones + 1e-12);
    }

    #[test]
    fn common_scaling_leaves_argmin_unchanged() {
        let a = ring_cloud(300, 3.0, (0.0, 4.0), 31);
        let b = scale_cloud(&ring_cloud(300, 3.0, (2.5, 6.3), 32), 0.7).unwrap();
        let sol1 = optimize_scales(&[a.clone(), b.clone()], &[(0, 1)], (0.25, 4.0)).unwrap();
        let s = 1.9;
        let sol2 = optimize_scales(
            &[scale_cloud(&a, s).unwrap(), scale_cloud(&b, s).unwrap()],
            &[(0, 1)],
            (0.25, 4.0),
        )
        .unwrap();
        assert!((sol1.lambdas[1] - sol2.lambdas[1]).abs() < 5e-3, "{} vs {}", sol1.lambdas[1], sol2.lambdas[1]);
    }

    fn plane_with_outliers(seed: u64) -> PointCloud {
        let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d) | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut pts = Vec::new();
        for _ in 0..1000 {
            pts.push(Vector3::new(next() * 10.0 - 5.0, 1.5, next() * 10.0 - 5.0));
        }
        for _ in 0..50 {
            pts.push(Vector3::new(next() * 6.0 - 3.0, next() * 6.0 - 3.0, next() * 6.0 - 3.0));
        }
        PointCloud::new(pts)
    }

    #[test]
    fn ransac_finds_horizontal_plane() {
        let cloud = plane_with_outliers(0xfeed);
        let (plane, count) = detect_ground_plane(&cloud, 7, &RansacParams::default()).unwrap().unwrap();
        let tilt = plane.normal().dot(&Vector3::new(0.0, 1.0, 0.0)).acos().to_degrees();
        assert!(tilt < 1.0, "tilt {tilt}°");
        assert!((plane.offset() - 1.5).abs() <= 0.05, "offset {}", plane.offset());
        assert!(count >= 950);
    }

    #[test]
    fn vertical_wall_fails_the_gate() {
        let pts: Vec<Vector3<f64>> =
            (0..900).map(|i| Vector3::new(2.0, (i % 30) as f64 * 0.1, (i / 30) as f64 * 0.1)).collect();
        let found = detect_ground_plane(&PointCloud::new(pts), 3, &RansacParams::default()).unwrap();
        assert!(found.is_none());
    }

    #[test]
    fn too_few_points_is_an_error() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]);
        assert!(detect_ground_plane(&cloud, 1, &RansacParams::default()).is_err());
    }

    #[test]
    fn ground_scale_ratios() {
        let plane = Plane3::new(Vector3::new(0.0, 1.0, 0.0), 1.5).unwrap();
        let origin = Vector3::zeros();
        assert!((global_scale_from_ground(&plane, &origin, 1.5).unwrap() - 1.0).abs() < 1e-12);
        let plane3 = Plane3::new(Vector3::new(0.0, 1.0, 0.0), 3.0).unwrap();
        assert!((global_scale_from_ground(&plane3, &origin, 1.5).unwrap() - 0.5).abs() < 1e-12);
        let plane075 = Plane3::new(Vector3::new(0.0, 1.0, 0.0), 0.75).unwrap();
        assert!((global_scale_from_ground(&plane075, &origin, 1.5).unwrap() - 2.0).abs() < 1e-12);
        let on_plane = Vector3::new(0.0, 1.5, 0.0);
        assert!(global_scale_from_ground(&plane, &on_plane, 1.5).is_err());
    }

    #[test]
    fn none_mode_is_a_plain_union() {
        let v = ScanView { cloud: ring_cloud(50, 2.0, (0.0, 6.0), 40), origin: Vector3::zeros(), heading: 0.0 };
        let out = align_and_merge(&[v.clone()], AlignmentMode::None, &AlignParams::default(), &RansacParams::default(), 1)
            .unwrap();
        assert_eq!(out.cloud, v.cloud);
        assert_eq!(out.report.retained, vec![true]);
    }

    #[test]
    fn ground_mode_drops_viewless_floor() {
        // View 0 sees a floor; view 1 is a bare wall.
        let with_floor = plane_with_outliers(50);
        let wall = PointCloud::new(
            (0..600).map(|i| Vector3::new(2.0, (i % 20) as f64 * 0.1 - 1.0, (i / 20) as f64 * 0.1)).collect(),
        );
        let views = [
            ScanView { cloud: with_floor, origin: Vector3::zeros(), heading: 0.0 },
            ScanView { cloud: wall.clone(), origin: Vector3::zeros(), heading: 1.0 },
        ];
        let out =
            align_and_merge(&views, AlignmentMode::Ground, &AlignParams::default(), &RansacParams::default(), 2)
                .unwrap();
        assert_eq!(out.report.retained, vec![true, false]);
        assert!(out.origins[1].is_none());
        // None of the wall's points should survive into the merge.
        assert!(out.cloud.len() < 1100);
    }

    #[test]
    fn angular_span_of_full_circle() {
        let headings: Vec<f64> = (0..6).map(|i| i as f64 * std::f64::consts::TAU / 6.0).collect();
        assert!(angular_span(&headings) >= 300f64.to_radians() - 1e-9);
        let partial: Vec<f64> = (0..3).map(|i| i as f64 * 0.5).collect();
        assert!(angular_span(&partial) < 300f64.to_radians());
    }
}
