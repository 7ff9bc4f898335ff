//! Synthetic evaluation harness: exact ray casting and visibility on vector
//! floor plans, the equiangular ray-tracing matching baseline, accuracy
//! metrics, seeded floor-plan generation, and a depth-map renderer that
//! turns a plan into a synthetic rotational scan.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::FloorPlan;
use crate::geometry::{DepthMap, Intrinsics, Pose3};
use crate::matching::{HeatmapStack, PoseEstimate};
use crate::raster::Raster2D;
use crate::segments::{FrameTag, Segment2, SegmentSet};

/// Equiangular range scan; `INFINITY` marks rays without a hit in range.
#[derive(Debug, Clone, PartialEq)]
pub struct RayScan {
    pub origin: Vector2<f64>,
    /// Absolute ray angles (radians) at capture time.
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

/// Distance from ray (origin, angle) to segment (a, b); `None` when they
/// miss. `t_min` suppresses hits at the ray origin itself.
fn ray_segment_distance(origin: Vector2<f64>, angle: f64, a: Vector2<f64>, b: Vector2<f64>) -> Option<f64> {
    let (sin, cos) = angle.sin_cos();
    let d = Vector2::new(cos, sin);
    let e = b - a;
    let denom = d.x * e.y - d.y * e.x;
    if denom.abs() < 1e-15 {
        return None; // parallel (collinear overlap treated as a miss)
    }
    let ao = a - origin;
    let t = (ao.x * e.y - ao.y * e.x) / denom;
    let s = (ao.x * d.y - ao.y * d.x) / denom;
    if t > 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&s) {
        Some(t)
    } else {
        None
    }
}

fn nearest_hit(segments: &[Segment2], origin: Vector2<f64>, angle: f64) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in segments.iter().enumerate() {
        if let Some(t) = ray_segment_distance(origin, angle, s.a, s.b) {
            if best.map_or(true, |(bt, _)| t < bt - 1e-12) {
                best = Some((t, i));
            }
        }
    }
    best
}

/// Casts `n_rays` equiangular rays starting at the pose heading; every plan
/// segment blocks (doors are walls here).
pub fn ray_cast(plan: &FloorPlan, pose: &PoseEstimate, n_rays: usize, max_range: f64) -> Result<RayScan> {
    if n_rays == 0 {
        return Err(Error::invalid("ray_cast needs at least one ray".to_string()));
    }
    let origin = pose.position();
    if !plan.is_traversable(&origin) {
        return Err(Error::invalid(format!("pose ({}, {}) is outside traversable space", pose.x, pose.y)));
    }
    let mut angles = Vec::with_capacity(n_rays);
    let mut ranges = Vec::with_capacity(n_rays);
    for i in 0..n_rays {
        let angle = pose.theta + i as f64 * std::f64::consts::TAU / n_rays as f64;
        let range = match nearest_hit(&plan.vector.segments, origin, angle) {
            Some((t, _)) if t <= max_range => t,
            _ => f64::INFINITY,
        };
        angles.push(angle);
        ranges.push(range);
    }
    Ok(RayScan { origin, angles, ranges, max_range })
}

/// Exact visible wall geometry from a pose, clipped to `max_range` and
/// expressed pose-relative (the pose maps to the origin, heading 0).
pub fn perfect_segments(plan: &FloorPlan, pose: &PoseEstimate, max_range: f64) -> Result<SegmentSet> {
    let origin = pose.position();
    if !plan.is_traversable(&origin) {
        return Err(Error::invalid(format!("pose ({}, {}) is outside traversable space", pose.x, pose.y)));
    }
    let segments = &plan.vector.segments;

    // Event angles: every endpoint, plus proper crossings between segments.
    let mut events: Vec<f64> = Vec::new();
    for s in segments {
        events.push((s.a - origin).y.atan2((s.a - origin).x));
        events.push((s.b - origin).y.atan2((s.b - origin).x));
    }
    for i in 0..segments.len() {
        for j in (i + 1)..segments.len() {
            if let Some(p) = segment_intersection(&segments[i], &segments[j]) {
                events.push((p - origin).y.atan2((p - origin).x));
            }
        }
    }
    let tau = std::f64::consts::TAU;
    for e in events.iter_mut() {
        *e = e.rem_euclid(tau);
    }
    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    events.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if events.is_empty() {
        return Ok(SegmentSet::new(Vec::new(), FrameTag::Observation));
    }

    // One visible piece per angular wedge between consecutive events.
    #[derive(Clone, Copy)]
    struct Piece {
        seg: usize,
        a: Vector2<f64>,
        b: Vector2<f64>,
    }
    let mut pieces: Vec<Piece> = Vec::new();
    let n = events.len();
    for i in 0..n {
        let a0 = events[i];
        let a1 = if i + 1 < n { events[i + 1] } else { events[0] + tau };
        if a1 - a0 < 1e-12 {
            continue;
        }
        let mid = 0.5 * (a0 + a1);
        let Some((_, seg_idx)) = nearest_hit(segments, origin, mid) else { continue };
        let seg = &segments[seg_idx];
        // Clip the carrier segment to the wedge boundary rays.
        let p0 = ray_line_point(origin, a0, seg);
        let p1 = ray_line_point(origin, a1, seg);
        let (Some(p0), Some(p1)) = (p0, p1) else { continue };
        if let Some((ca, cb)) = clip_to_disk(p0, p1, origin, max_range) {
            if (cb - ca).norm() > 1e-9 {
                pieces.push(Piece { seg: seg_idx, a: ca, b: cb });
            }
        }
    }

    // Fuse adjacent wedge pieces that continue the same carrier segment.
    let mut fused: Vec<Piece> = Vec::new();
    for p in pieces {
        if let Some(last) = fused.last_mut() {
            if last.seg == p.seg && (last.b - p.a).norm() < 1e-6 {
                last.b = p.b;
                continue;
            }
        }
        fused.push(p);
    }
    if fused.len() > 1 {
        let (first, last) = (fused[0], *fused.last().expect("non-empty"));
        if first.seg == last.seg && (last.b - first.a).norm() < 1e-6 {
            fused[0].a = last.a;
            fused.pop();
        }
    }

    // Express pose-relative: rotate by -theta about the pose.
    let (sin, cos) = (-pose.theta).sin_cos();
    let to_obs = |p: Vector2<f64>| {
        let d = p - origin;
        Vector2::new(d.x * cos - d.y * sin, d.x * sin + d.y * cos)
    };
    let out: Vec<Segment2> = fused
        .into_iter()
        .map(|p| Segment2::new(to_obs(p.a), to_obs(p.b)))
        .filter(|s| s.length() > 1e-9)
        .collect();
    Ok(SegmentSet::new(out, FrameTag::Observation))
}

/// Where the ray at `angle` meets the segment's carrier line (clamped to the
/// segment's extent), or `None` for near-parallel rays.
fn ray_line_point(origin: Vector2<f64>, angle: f64, seg: &Segment2) -> Option<Vector2<f64>> {
    let (sin, cos) = angle.sin_cos();
    let d = Vector2::new(cos, sin);
    let e = seg.b - seg.a;
    let denom = d.x * e.y - d.y * e.x;
    if denom.abs() < 1e-15 {
        return None;
    }
    let ao = seg.a - origin;
    let s = (ao.x * d.y - ao.y * d.x) / denom;
    let s = s.clamp(0.0, 1.0);
    Some(seg.a + e * s)
}

fn segment_intersection(s1: &Segment2, s2: &Segment2) -> Option<Vector2<f64>> {
    let d1 = s1.b - s1.a;
    let d2 = s2.b - s2.a;
    let denom = d1.x * d2.y - d1.y * d2.x;
    if denom.abs() < 1e-15 {
        return None;
    }
    let d = s2.a - s1.a;
    let t = (d.x * d2.y - d.y * d2.x) / denom;
    let u = (d.x * d1.y - d.y * d1.x) / denom;
    if (1e-9..=1.0 - 1e-9).contains(&t) && (1e-9..=1.0 - 1e-9).contains(&u) {
        Some(s1.a + d1 * t)
    } else {
        None
    }
}

/// Chord of the segment inside the disk (center, radius), if any.
fn clip_to_disk(a: Vector2<f64>, b: Vector2<f64>, center: Vector2<f64>, radius: f64) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let d = b - a;
    let f = a - center;
    let aa = d.dot(&d);
    if aa < 1e-18 {
        return if f.norm() <= radius { Some((a, b)) } else { None };
    }
    let bb = 2.0 * f.dot(&d);
    let cc = f.dot(&f) - radius * radius;
    let disc = bb * bb - 4.0 * aa * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = ((-bb - sq) / (2.0 * aa)).max(0.0);
    let t1 = ((-bb + sq) / (2.0 * aa)).min(1.0);
    if t0 >= t1 {
        return None;
    }
    Some((a + d * t0, a + d * t1))
}

/// Per-cell, per-direction nearest-wall distances over traversable cells.
pub struct DistanceField {
    pub n_dirs: usize,
    pub max_range: f64,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Vector2<f64>,
    /// `values[cell * n_dirs + dir]`; NaN for non-traversable cells,
    /// INFINITY for in-range misses.
    pub values: Vec<f32>,
}

/// Ray-casts every traversable cell center along `n_dirs` equiangular
/// directions (direction 0 along +x).
pub fn build_distance_field(plan: &FloorPlan, n_dirs: usize, max_range: f64) -> DistanceField {
    let walls = &plan.walls;
    let cells = walls.width * walls.height;
    let tau = std::f64::consts::TAU;
    let values: Vec<f32> = (0..cells)
        .into_par_iter()
        .flat_map_iter(|cell| {
            let (ix, iy) = (cell % walls.width, cell / walls.width);
            let free = plan.traversable.get(ix, iy) > 0.0;
            let center = walls.cell_center(ix, iy);
            // Segments beyond max range can never be the nearest hit.
            let nearby: Vec<&Segment2> = if free {
                plan.vector
                    .segments
                    .iter()
                    .filter(|s| point_segment_distance(center, s) <= max_range)
                    .collect()
            } else {
                Vec::new()
            };
            (0..n_dirs).map(move |j| {
                if !free {
                    return f32::NAN;
                }
                let angle = j as f64 * tau / n_dirs as f64;
                let mut best = f64::INFINITY;
                for s in &nearby {
                    if let Some(t) = ray_segment_distance(center, angle, s.a, s.b) {
                        best = best.min(t);
                    }
                }
                if best <= max_range {
                    best as f32
                } else {
                    f32::INFINITY
                }
            })
        })
        .collect();
    DistanceField {
        n_dirs,
        max_range,
        width: walls.width,
        height: walls.height,
        resolution: walls.resolution,
        origin: walls.origin,
        values,
    }
}

/// Ray-tracing baseline: scores every traversable cell and hypothesis
/// orientation by the negative mean absolute range difference between the
/// scan and the distance field (sentinel rays on either side excluded).
pub fn ray_match(plan: &FloorPlan, field: &DistanceField, scan: &RayScan, thetas: &[f64]) -> Result<HeatmapStack> {
    let n_rays = scan.ranges.len();
    if n_rays == 0 || thetas.is_empty() {
        return Err(Error::invalid("ray_match needs rays and orientation hypotheses".to_string()));
    }
    if field.n_dirs % n_rays != 0 {
        return Err(Error::invalid(format!(
            "distance field with {} directions cannot serve a {}-ray scan",
            field.n_dirs, n_rays
        )));
    }
    let stride = field.n_dirs / n_rays;
    let tau = std::f64::consts::TAU;
    let dir_step = tau / field.n_dirs as f64;
    let cells = field.width * field.height;
    let worst = -field.max_range;

    let maps: Vec<Raster2D> = thetas
        .par_iter()
        .map(|&theta| {
            let k = ((theta.rem_euclid(tau) / dir_step).round() as usize) % field.n_dirs;
            let mut map = Raster2D::zeros(field.width, field.height, field.resolution, field.origin)
                .expect("field resolution is positive");
            let mut min_traversable = f64::INFINITY;
            for cell in 0..cells {
                let base = cell * field.n_dirs;
                if field.values[base].is_nan() {
                    continue;
                }
                let mut acc = 0.0f64;
                let mut used = 0usize;
                for (i, &robs) in scan.ranges.iter().enumerate() {
                    if !robs.is_finite() {
                        continue;
                    }
                    let pred = field.values[base + (k + i * stride) % field.n_dirs];
                    if !pred.is_finite() {
                        continue;
                    }
                    acc += (robs - pred as f64).abs();
                    used += 1;
                }
                let score = if used == 0 { worst } else { -acc / used as f64 };
                map.values[cell] = score;
                min_traversable = min_traversable.min(score);
            }
            for cell in 0..cells {
                if field.values[cell * field.n_dirs].is_nan() {
                    map.values[cell] = min_traversable;
                }
            }
            map
        })
        .collect();

    Ok(HeatmapStack {
        maps,
        thetas: thetas.to_vec(),
        traversable: plan.traversable.values.iter().map(|&v| v > 0.0).collect(),
    })
}

/// Accuracy table over fixed positional thresholds plus the joint
/// 1 m / 30° criterion. Boundaries are inclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub within: Vec<f64>,
    pub within_1m_30deg: f64,
    pub count: usize,
}

pub const EVAL_THRESHOLDS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

pub fn evaluate(predictions: &[PoseEstimate], truths: &[PoseEstimate]) -> Result<EvalReport> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::invalid(format!(
            "evaluate needs equal non-empty lists, got {} predictions and {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let n = predictions.len() as f64;
    let pos_err: Vec<f64> =
        predictions.iter().zip(truths).map(|(p, t)| (p.position() - t.position()).norm()).collect();
    let ang_err: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let d = (p.theta - t.theta).rem_euclid(std::f64::consts::TAU);
            d.min(std::f64::consts::TAU - d)
        })
        .collect();
    let within: Vec<f64> = EVAL_THRESHOLDS
        .iter()
        .map(|&th| pos_err.iter().filter(|&&e| e <= th).count() as f64 / n)
        .collect();
    let within_1m_30deg = pos_err
        .iter()
        .zip(&ang_err)
        .filter(|(&p, &a)| p <= 1.0 && a <= 30f64.to_radians())
        .count() as f64
        / n;
    Ok(EvalReport { thresholds: EVAL_THRESHOLDS.to_vec(), within, within_1m_30deg, count: predictions.len() })
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "samples: {}", self.count)?;
        for (t, w) in self.thresholds.iter().zip(&self.within) {
            writeln!(f, "  acc@{:<4}m : {:5.1}%", t, w * 100.0)?;
        }
        write!(f, "  acc@1m30° : {:5.1}%", self.within_1m_30deg * 100.0)
    }
}

/// Parameters for the seeded floor-plan generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSpec {
    pub width: f64,
    pub height: f64,
    /// Target number of rooms (binary splits with doors).
    pub rooms: usize,
    pub door_width: f64,
    pub min_room: f64,
    /// Free-standing oblique wall stubs added for non-Manhattan texture.
    pub oblique_stubs: usize,
    pub resolution: f64,
    /// Where splits land within the allowed range: 0 = always the midpoint
    /// (repetitive room sizes), 0.5 = anywhere (distinctive rooms).
    pub split_jitter: f64,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            width: 18.0,
            height: 14.0,
            rooms: 6,
            door_width: 1.0,
            min_room: 3.0,
            oblique_stubs: 2,
            resolution: 0.1,
            split_jitter: 0.5,
        }
    }
}

/// Random rectilinear-plus-oblique layout with guaranteed connectivity
/// (every dividing wall carries a door; stubs keep raster-visible
/// clearance). Deterministic per seed.
pub fn gen_floorplan(seed: u64, spec: &PlanSpec) -> Result<FloorPlan> {
    if spec.rooms == 0 || spec.width <= 0.0 || spec.height <= 0.0 {
        return Err(Error::invalid("plan spec needs positive dimensions and >= 1 room".to_string()));
    }
    if spec.min_room <= spec.door_width + 0.6 {
        return Err(Error::invalid("rooms too small for the requested door width".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = crate::floorplan::rect_walls(0.0, 0.0, spec.width, spec.height);
    let mut leaves = vec![(0.0, 0.0, spec.width, spec.height)];

    while leaves.len() < spec.rooms {
        // Split the largest splittable leaf.
        let mut pick: Option<usize> = None;
        for (i, leaf) in leaves.iter().enumerate() {
            let splittable = (leaf.2 - leaf.0).max(leaf.3 - leaf.1) >= 2.0 * spec.min_room;
            if splittable && pick.map_or(true, |p| area(leaves[p]) < area(*leaf)) {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        let (x0, y0, x1, y1) = leaves.swap_remove(i);
        let vertical = if (x1 - x0) - (y1 - y0) > 1e-9 {
            true
        } else if (y1 - y0) - (x1 - x0) > 1e-9 {
            false
        } else {
            rng.random_bool(0.5)
        };
        let jittered_cut = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| -> f64 {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo) * (spec.split_jitter * 2.0).min(1.0);
            if half <= 0.0 {
                mid
            } else {
                rng.random_range((mid - half)..(mid + half))
            }
        };
        if vertical {
            let cut = jittered_cut(x0 + spec.min_room, x1 - spec.min_room, &mut rng);
            let door = rng.random_range((y0 + 0.3)..(y1 - 0.3 - spec.door_width));
            segments.push(Segment2::new(Vector2::new(cut, y0), Vector2::new(cut, door)));
            segments.push(Segment2::new(Vector2::new(cut, door + spec.door_width), Vector2::new(cut, y1)));
            leaves.push((x0, y0, cut, y1));
            leaves.push((cut, y0, x1, y1));
        } else {
            let cut = jittered_cut(y0 + spec.min_room, y1 - spec.min_room, &mut rng);
            let door = rng.random_range((x0 + 0.3)..(x1 - 0.3 - spec.door_width));
            segments.push(Segment2::new(Vector2::new(x0, cut), Vector2::new(door, cut)));
            segments.push(Segment2::new(Vector2::new(door + spec.door_width, cut), Vector2::new(x1, cut)));
            leaves.push((x0, y0, x1, cut));
            leaves.push((x0, cut, x1, y1));
        }
    }

    // Oblique stubs: free-standing diagonals with >= 0.3 m clearance from
    // every existing wall, so they can never seal a region.
    let clearance = 0.3f64.max(3.0 * spec.resolution);
    for _ in 0..spec.oblique_stubs {
        for _attempt in 0..20 {
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let (x0, y0, x1, y1) = leaf;
            if (x1 - x0) < 2.0 * clearance + 1.0 || (y1 - y0) < 2.0 * clearance + 1.0 {
                continue;
            }
            let cx = rng.random_range((x0 + clearance + 0.5)..(x1 - clearance - 0.5));
            let cy = rng.random_range((y0 + clearance + 0.5)..(y1 - clearance - 0.5));
            let len = rng.random_range(0.8..((x1 - x0).min(y1 - y0) * 0.4).max(0.81));
            let angle = rng.random_range(0.2..1.4) + if rng.random_bool(0.5) { std::f64::consts::FRAC_PI_2 } else { 0.0 };
            let half = Vector2::new(angle.cos(), angle.sin()) * (len / 2.0);
            let stub = Segment2::new(Vector2::new(cx, cy) - half, Vector2::new(cx, cy) + half);
            let clear = segments.iter().all(|s| segment_distance(s, &stub) > clearance);
            let inside = stub.a.x > x0 + clearance
                && stub.a.x < x1 - clearance
                && stub.a.y > y0 + clearance
                && stub.a.y < y1 - clearance
                && stub.b.x > x0 + clearance
                && stub.b.x < x1 - clearance
                && stub.b.y > y0 + clearance
                && stub.b.y < y1 - clearance;
            if clear && inside {
                segments.push(stub);
                break;
            }
        }
    }

    // Seed the flood fill at an interior point with clearance from every
    // wall; scan candidate fractions of the first leaf until one is clear.
    let (x0, y0, x1, y1) = leaves[0];
    let mut seed_point = Vector2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    'candidates: for fy in [0.45, 0.55, 0.3, 0.7, 0.5] {
        for fx in [0.6, 0.4, 0.5, 0.25, 0.75] {
            let p = Vector2::new(x0 + fx * (x1 - x0), y0 + fy * (y1 - y0));
            let probe = Segment2::new(p, p);
            if segments.iter().all(|s| segment_distance(s, &probe) > clearance) {
                seed_point = p;
                break 'candidates;
            }
        }
    }
    FloorPlan::build(segments, spec.resolution, seed_point)
}

fn area(r: (f64, f64, f64, f64)) -> f64 {
    (r.2 - r.0) * (r.3 - r.1)
}

fn point_segment_distance(p: Vector2<f64>, s: &Segment2) -> f64 {
    let d = s.b - s.a;
    let len2 = d.dot(&d);
    if len2 < 1e-18 {
        return (p - s.a).norm();
    }
    let t = ((p - s.a).dot(&d) / len2).clamp(0.0, 1.0);
    (p - (s.a + d * t)).norm()
}

fn segment_distance(s1: &Segment2, s2: &Segment2) -> f64 {
    if segment_intersection(s1, s2).is_some() {
        return 0.0;
    }
    let pt = |p: Vector2<f64>, s: &Segment2| -> f64 {
        let d = s.b - s.a;
        let len2 = d.dot(&d);
        if len2 < 1e-18 {
            return (p - s.a).norm();
        }
        let t = ((p - s.a).dot(&d) / len2).clamp(0.0, 1.0);
        (p - (s.a + d * t)).norm()
    };
    pt(s1.a, s2).min(pt(s1.b, s2)).min(pt(s2.a, s1)).min(pt(s2.b, s1))
}

/// Synthetic rotational-scan rendering parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanSpec {
    pub n_views: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub hfov_deg: f64,
    /// True camera height above the floor (meters).
    pub camera_height: f64,
    /// Floor-to-ceiling height (meters).
    pub ceiling_height: f64,
    pub max_depth: f64,
    /// Per-view multiplicative depth corruption; empty means no corruption.
    pub view_scales: Vec<f64>,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            n_views: 6,
            image_width: 160,
            image_height: 120,
            hfov_deg: 100.0,
            camera_height: 1.5,
            ceiling_height: 2.7,
            max_depth: 50.0,
            view_scales: Vec::new(),
        }
    }
}

/// One rendered view of a synthetic scan.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub pose: Pose3,
}

/// Renders a stationary rotational scan at `position` (plan frame) with the
/// tracking frame oriented so heading 0 equals plan heading `plan_heading`.
///
/// Views rotate in equal steps about the camera; walls span floor to
/// ceiling; depths are z-depths with 0 for out-of-range pixels. The
/// ground-truth pose of the scan in the plan frame is
/// `(position, plan_heading)`.
pub fn render_scan(
    plan: &FloorPlan,
    position: Vector2<f64>,
    plan_heading: f64,
    spec: &ScanSpec,
) -> Result<Vec<RenderedView>> {
    if !plan.is_traversable(&position) {
        return Err(Error::invalid("scan position is outside traversable space".to_string()));
    }
    if !spec.view_scales.is_empty() && spec.view_scales.len() != spec.n_views {
        return Err(Error::invalid(format!(
            "{} view scales for {} views",
            spec.view_scales.len(),
            spec.n_views
        )));
    }
    let (w, h) = (spec.image_width, spec.image_height);
    let fx = (w as f64 / 2.0) / (spec.hfov_deg.to_radians() / 2.0).tan();
    let intr = Intrinsics::new(fx, fx, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h)?;
    let floor_y = spec.camera_height;
    let ceiling_y = spec.camera_height - spec.ceiling_height;
    let (plan_sin, plan_cos) = plan_heading.sin_cos();

    let mut views = Vec::with_capacity(spec.n_views);
    for view in 0..spec.n_views {
        let heading = view as f64 * std::f64::consts::TAU / spec.n_views as f64;
        let pose = Pose3::from_heading(heading, Vector3::zeros());
        let mut depth = vec![0.0f32; w * h];
        for v in 0..h {
            for u in 0..w {
                let dir_cam = Vector3::new(
                    (u as f64 - intr.cx) / intr.fx,
                    (v as f64 - intr.cy) / intr.fy,
                    1.0,
                );
                let dir = pose.rotate(&dir_cam);
                // Tracking-frame horizontal direction to plan frame.
                let dx = dir.x * plan_cos - dir.z * plan_sin;
                let dz = dir.x * plan_sin + dir.z * plan_cos;

                let mut best = f64::INFINITY;
                // Walls: 2D hit, then height gate.
                let horiz = (dx * dx + dz * dz).sqrt();
                if horiz > 1e-12 {
                    let angle = dz.atan2(dx);
                    if let Some((t2d, _)) = nearest_hit(&plan.vector.segments, position, angle) {
                        let t = t2d / horiz;
                        let y_hit = t * dir.y;
                        if y_hit >= ceiling_y - 1e-9 && y_hit <= floor_y + 1e-9 {
                            best = t;
                        }
                    }
                }
                // Floor and ceiling.
                if dir.y > 1e-12 {
                    best = best.min(floor_y / dir.y);
                } else if dir.y < -1e-12 {
                    best = best.min(ceiling_y / dir.y);
                }
                if best.is_finite() && best <= spec.max_depth {
                    let s = spec.view_scales.get(view).copied().unwrap_or(1.0);
                    depth[v * w + u] = (best * s) as f32;
                }
            }
        }
        views.push(RenderedView {
            depth: DepthMap::new(w, h, depth, None)?,
            intrinsics: intr.clone(),
            pose,
        });
    }
    Ok(views)
}
