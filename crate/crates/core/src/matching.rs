//! Kernel-based layout matching of observed walls against a floor plan.
//!
//! Observed segments rotated to a candidate orientation become a pair of
//! kernels: RW, the Gaussian-smoothed recorded-wall bitmap (reward where
//! plan walls coincide with observed walls), and CES, the certainly-empty
//! triangles between the observer and each wall (penalty where plan walls
//! violate visibility). Correlating the plan's wall bitmap with
//! `RW − α·CES` scores every cell as a candidate observer position; doing
//! so per orientation and taking a cellwise max over a few corrective scale
//! factors yields a heatmap stack — a posterior over (x, y, θ).

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::correlate::Correlator;
use crate::error::{Error, Result};
use crate::floorplan::FloorPlan;
use crate::raster::{supercover_cells, Raster2D};
use crate::segments::{Segment2, SegmentSet};

/// Length-weighted histogram of segment orientations over [-π/2, π/2).
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationHistogram {
    pub bins: Vec<f64>,
    pub bin_width: f64,
}

impl OrientationHistogram {
    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

pub fn orientation_histogram(set: &SegmentSet, bin_width: f64) -> Result<OrientationHistogram> {
    if set.is_empty() {
        return Err(Error::invalid("cannot build a histogram from zero segments".to_string()));
    }
    let n = (std::f64::consts::PI / bin_width).round();
    if n < 1.0 || ((n * bin_width) - std::f64::consts::PI).abs() > 1e-9 {
        return Err(Error::invalid(format!("bin width {bin_width} does not divide π")));
    }
    let n = n as usize;
    let mut bins = vec![0.0; n];
    for s in &set.segments {
        let angle = s.orientation(); // already folded into [-π/2, π/2)
        let idx = (((angle + std::f64::consts::FRAC_PI_2) / bin_width).floor() as usize).min(n - 1);
        bins[idx] += s.length();
    }
    Ok(OrientationHistogram { bins, bin_width })
}

/// Orientation candidates from the circular cross-correlation of the
/// observation and floor-plan histograms.
///
/// The top `count / 2` correlation peaks (non-maximum suppressed over ±2
/// bins) become candidate rotations in [0, π); each is paired with its
/// 180° complement. Too few distinct peaks are padded with the next-best
/// shifts.
pub fn candidate_orientations(
    obs: &OrientationHistogram,
    plan: &OrientationHistogram,
    count: usize,
) -> Result<Vec<f64>> {
    if obs.bins.len() != plan.bins.len() || (obs.bin_width - plan.bin_width).abs() > 1e-12 {
        return Err(Error::invalid("histograms must share a bin structure".to_string()));
    }
    if count < 2 || count % 2 != 0 {
        return Err(Error::invalid(format!("orientation count must be even and >= 2, got {count}")));
    }
    if obs.total() <= 0.0 || plan.total() <= 0.0 {
        return Err(Error::invalid("all-zero orientation histogram".to_string()));
    }
    let n = obs.bins.len();
    let corr: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|j| obs.bins[j] * plan.bins[(j + k) % n]).sum())
        .collect();

    // Rank shifts by correlation, break ties on index; greedily keep peaks
    // at least 3 bins apart (circular).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| corr[b].partial_cmp(&corr[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let wanted = count / 2;
    let mut peaks: Vec<usize> = Vec::with_capacity(wanted);
    for &k in &order {
        if peaks.iter().all(|&p| circular_bin_distance(p, k, n) > 2) {
            peaks.push(k);
            if peaks.len() == wanted {
                break;
            }
        }
    }
    if peaks.len() < wanted {
        for &k in &order {
            if !peaks.contains(&k) {
                peaks.push(k);
                if peaks.len() == wanted {
                    break;
                }
            }
        }
    }

    let mut thetas = Vec::with_capacity(count);
    for &k in &peaks {
        thetas.push(k as f64 * obs.bin_width);
    }
    for &k in &peaks {
        thetas.push(k as f64 * obs.bin_width + std::f64::consts::PI);
    }
    Ok(thetas)
}

fn circular_bin_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// The two rasters matched against the plan for one candidate orientation.
#[derive(Debug, Clone)]
pub struct KernelPair {
    /// Gaussian-smoothed recorded-wall bitmap, peak-normalized to 1.
    pub rw: Raster2D,
    /// Binary certainly-empty-space bitmap (observer–wall triangles), with
    /// the dilated wall band itself excluded.
    pub ces: Raster2D,
    /// Rotation applied to the observation (radians).
    pub theta: f64,
    /// Cell of the scan origin inside the kernel grids.
    pub anchor: (usize, usize),
}

/// Builds the RW/CES kernel pair for one rotation.
///
/// Segments and the scan origin are rotated by `theta` about the scan
/// origin, rasterized at `resolution`, smoothed with an isotropic Gaussian
/// of standard deviation `sigma` meters (RW only), and trimmed to the
/// minimal grid holding the origin and all geometry.
pub fn build_kernels(
    obs: &SegmentSet,
    scan_origin: Vector2<f64>,
    theta: f64,
    resolution: f64,
    sigma: f64,
) -> Result<KernelPair> {
    if obs.is_empty() {
        return Err(Error::invalid("cannot build kernels from zero observed segments".to_string()));
    }
    let (sin, cos) = theta.sin_cos();
    let rotate = |p: Vector2<f64>| -> Vector2<f64> {
        let d = p - scan_origin;
        scan_origin + Vector2::new(d.x * cos - d.y * sin, d.x * sin + d.y * cos)
    };
    let rotated: Vec<Segment2> =
        obs.segments.iter().map(|s| Segment2::new(rotate(s.a), rotate(s.b))).collect();

    let mut min = scan_origin;
    let mut max = scan_origin;
    for s in &rotated {
        for p in [s.a, s.b] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
    }
    let pad_cells = (3.0 * sigma / resolution).ceil() as usize + 2;
    let pad = pad_cells as f64 * resolution;
    let origin = Vector2::new(min.x - pad, min.y - pad);
    let width = ((max.x - min.x + 2.0 * pad) / resolution).ceil() as usize + 1;
    let height = ((max.y - min.y + 2.0 * pad) / resolution).ceil() as usize + 1;

    let mut raw = Raster2D::zeros(width, height, resolution, origin)?;
    let to_cell = |p: Vector2<f64>| ((p.x - origin.x) / resolution, (p.y - origin.y) / resolution);
    for s in &rotated {
        for (ix, iy) in supercover_cells(to_cell(s.a), to_cell(s.b), width, height) {
            raw.set(ix, iy, 1.0);
        }
    }

    let mut rw = raw.clone();
    if sigma > 0.0 {
        rw.gaussian_blur(sigma / resolution);
    }
    let peak = rw.max_value();
    if peak > 0.0 {
        for v in rw.values.iter_mut() {
            *v /= peak;
        }
    }

    // CES: filled observer–segment triangles, minus the dilated wall band so
    // true walls never penalize themselves.
    let mut ces = Raster2D::zeros(width, height, resolution, origin)?;
    for s in &rotated {
        fill_triangle(&mut ces, scan_origin, s.a, s.b);
    }
    for iy in 0..height {
        for ix in 0..width {
            if ces.get(ix, iy) > 0.0 && near_wall(&raw, ix, iy) {
                ces.set(ix, iy, 0.0);
            }
        }
    }

    let anchor = raw
        .world_to_cell(&scan_origin)
        .expect("scan origin is inside the kernel grid by construction");
    Ok(KernelPair { rw, ces, theta, anchor })
}

fn near_wall(raw: &Raster2D, ix: usize, iy: usize) -> bool {
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (x, y) = (ix as i64 + dx, iy as i64 + dy);
            if x >= 0 && y >= 0 && (x as usize) < raw.width && (y as usize) < raw.height {
                if raw.get(x as usize, y as usize) > 0.0 {
                    return true;
                }
            }
        }
    }
    false
}

fn fill_triangle(raster: &mut Raster2D, a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) {
    let min_x = a.x.min(b.x).min(c.x);
    let max_x = a.x.max(b.x).max(c.x);
    let min_y = a.y.min(b.y).min(c.y);
    let max_y = a.y.max(b.y).max(c.y);
    let res = raster.resolution;
    let x0 = ((min_x - raster.origin.x) / res).floor().max(0.0) as usize;
    let y0 = ((min_y - raster.origin.y) / res).floor().max(0.0) as usize;
    let x1 = (((max_x - raster.origin.x) / res).ceil() as usize).min(raster.width.saturating_sub(1));
    let y1 = (((max_y - raster.origin.y) / res).ceil() as usize).min(raster.height.saturating_sub(1));
    let edge = |p: Vector2<f64>, q: Vector2<f64>, r: Vector2<f64>| (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    let area = edge(a, b, c);
    if area.abs() < 1e-12 {
        return;
    }
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            let p = raster.cell_center(ix, iy);
            let w0 = edge(a, b, p) / area;
            let w1 = edge(b, c, p) / area;
            let w2 = edge(c, a, p) / area;
            if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                raster.set(ix, iy, 1.0);
            }
        }
    }
}

/// Per-orientation score grids over the floor-plan cells.
#[derive(Debug, Clone)]
pub struct HeatmapStack {
    pub maps: Vec<Raster2D>,
    pub thetas: Vec<f64>,
    /// Row-major copy of the plan's traversable mask.
    pub traversable: Vec<bool>,
}

impl HeatmapStack {
    pub fn width(&self) -> usize {
        self.maps[0].width
    }

    pub fn height(&self) -> usize {
        self.maps[0].height
    }

    pub fn resolution(&self) -> f64 {
        self.maps[0].resolution
    }

    pub fn origin(&self) -> Vector2<f64> {
        self.maps[0].origin
    }

    pub fn min_value(&self) -> f64 {
        self.maps.iter().flat_map(|m| m.values.iter()).copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.maps.iter().flat_map(|m| m.values.iter()).copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.maps.iter().flat_map(|m| m.values.iter()).copied().sum()
    }
}

/// Scores every plan cell as a candidate observer position for one kernel.
///
/// Cells outside traversable space are pinned to the map's minimum
/// traversable score so they can never win the argmax.
pub fn match_kernel(plan: &FloorPlan, kernel: &KernelPair, alpha: f64) -> Result<Raster2D> {
    let correlator = Correlator::new(plan.walls.clone());
    match_kernel_with(&correlator, &plan.traversable, kernel, alpha)
}

/// As [`match_kernel`] but reusing a prepared correlator (the plan spectrum
/// is shared across the (θ, s) kernel grid).
pub fn match_kernel_with(
    correlator: &Correlator,
    traversable: &Raster2D,
    kernel: &KernelPair,
    alpha: f64,
) -> Result<Raster2D> {
    let plan_res = correlator.base().resolution;
    if (kernel.rw.resolution - plan_res).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "kernel resolution {} does not match plan resolution {plan_res}",
            kernel.rw.resolution
        )));
    }
    let mut combined = kernel.rw.clone();
    for (c, e) in combined.values.iter_mut().zip(&kernel.ces.values) {
        *c -= alpha * e;
    }
    let mut scores = correlator.correlate(&combined, kernel.anchor);

    let mut min_traversable = f64::INFINITY;
    let mut any = false;
    for (i, v) in scores.values.iter().enumerate() {
        if traversable.values[i] > 0.0 {
            min_traversable = min_traversable.min(*v);
            any = true;
        }
    }
    if !any {
        return Err(Error::invalid("floor plan has no traversable space".to_string()));
    }
    for (i, v) in scores.values.iter_mut().enumerate() {
        if traversable.values[i] == 0.0 {
            *v = min_traversable;
        }
    }
    Ok(scores)
}

/// Full heatmap stack: per orientation, the cellwise max over the
/// corrective scale factors `scales` applied to the observation.
pub fn compute_heatmaps(
    plan: &FloorPlan,
    obs: &SegmentSet,
    scan_origin: Vector2<f64>,
    thetas: &[f64],
    scales: &[f64],
    alpha: f64,
    sigma: f64,
) -> Result<HeatmapStack> {
    if thetas.is_empty() {
        return Err(Error::invalid("compute_heatmaps needs at least one orientation".to_string()));
    }
    if scales.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("corrective scales must be positive".to_string()));
    }
    let correlator = Correlator::new(plan.walls.clone());
    let per_theta: Result<Vec<Raster2D>> = thetas
        .par_iter()
        .map(|&theta| {
            let mut best: Option<Raster2D> = None;
            for &s in scales {
                let scaled_obs = SegmentSet::new(
                    obs.segments.iter().map(|seg| Segment2::new(seg.a * s, seg.b * s)).collect(),
                    obs.frame,
                );
                let kernel = build_kernels(&scaled_obs, scan_origin * s, theta, plan.resolution(), sigma)?;
                let scores = match_kernel_with(&correlator, &plan.traversable, &kernel, alpha)?;
                best = Some(match best {
                    None => scores,
                    Some(mut acc) => {
                        for (a, b) in acc.values.iter_mut().zip(&scores.values) {
                            *a = a.max(*b);
                        }
                        acc
                    }
                });
            }
            Ok(best.expect("scales is non-empty"))
        })
        .collect();

    Ok(HeatmapStack {
        maps: per_theta?,
        thetas: thetas.to_vec(),
        traversable: plan.traversable.values.iter().map(|&v| v > 0.0).collect(),
    })
}

/// Pose estimate in the floor-plan frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseEstimate {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub score: f64,
}

impl PoseEstimate {
    pub fn new(x: f64, y: f64, theta: f64, score: f64) -> Self {
        Self { x, y, theta: theta.rem_euclid(std::f64::consts::TAU), score }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Global maximum over (cell, orientation); ties break to the lowest
/// orientation index, then row-major cell order.
pub fn argmax_pose(stack: &HeatmapStack) -> Result<PoseEstimate> {
    if stack.maps.is_empty() {
        return Err(Error::invalid("empty heatmap stack".to_string()));
    }
    let mut best: Option<(f64, usize, usize)> = None; // (score, map, cell)
    for (mi, map) in stack.maps.iter().enumerate() {
        for (ci, &v) in map.values.iter().enumerate() {
            if best.map_or(true, |(bv, _, _)| v > bv) {
                best = Some((v, mi, ci));
            }
        }
    }
    let (score, mi, ci) = best.expect("stack has maps");
    if !score.is_finite() {
        return Err(Error::NoSolution("heatmap stack is all-minimum".to_string()));
    }
    let map = &stack.maps[mi];
    let (ix, iy) = (ci % map.width, ci / map.width);
    let center = map.cell_center(ix, iy);
    Ok(PoseEstimate::new(center.x, center.y, stack.thetas[mi], score))
}

/// Shifts the stack to non-negative and rescales so all entries sum to 1.
/// A degenerate all-equal stack becomes uniform over traversable cells.
pub fn normalize_to_pdf(stack: &HeatmapStack) -> HeatmapStack {
    let min = stack.min_value();
    let mut out = stack.clone();
    let mut total = 0.0f64;
    for map in &out.maps {
        for &v in &map.values {
            total += v - min;
        }
    }
    if total > 0.0 {
        for map in out.maps.iter_mut() {
            for v in map.values.iter_mut() {
                *v = (*v - min) / total;
            }
        }
    } else {
        let n_free = stack.traversable.iter().filter(|&&t| t).count();
        let mass = if n_free == 0 {
            0.0
        } else {
            1.0 / (n_free * stack.maps.len()) as f64
        };
        for map in out.maps.iter_mut() {
            for (i, v) in map.values.iter_mut().enumerate() {
                *v = if stack.traversable[i] { mass } else { 0.0 };
            }
        }
    }
    out
}
