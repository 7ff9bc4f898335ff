//! From a merged point cloud to 2D wall segments.
//!
//! The cloud is sliced to a thin horizontal band around the camera height
//! (walls cross the band, floor and ceiling do not), rasterized into an
//! occupancy grid, and traced into line segments with Canny edges followed
//! by a probabilistic Hough transform.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::canny::{canny_edges, CannyParams};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::hough::{probabilistic_hough, CellSegment, HoughParams};
use crate::raster::Raster2D;

/// Which frame a segment set lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    Observation,
    FloorPlan,
}

/// 2D line segment in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

impl Segment2 {
    pub fn new(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Orientation folded into [-π/2, π/2).
    pub fn orientation(&self) -> f64 {
        let d = self.b - self.a;
        let mut angle = d.y.atan2(d.x);
        while angle >= std::f64::consts::FRAC_PI_2 {
            angle -= std::f64::consts::PI;
        }
        while angle < -std::f64::consts::FRAC_PI_2 {
            angle += std::f64::consts::PI;
        }
        angle
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub segments: Vec<Segment2>,
    pub frame: FrameTag,
}

impl SegmentSet {
    pub fn new(segments: Vec<Segment2>, frame: FrameTag) -> Self {
        Self { segments, frame }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total segment length in meters.
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment2::length).sum()
    }
}

/// Points within `half_width` of `center_height` on the vertical (y) axis,
/// projected to the horizontal plane. Boundary-inclusive.
pub fn slice_band(cloud: &PointCloud, center_height: f64, half_width: f64) -> Result<Vec<Vector2<f64>>> {
    if half_width <= 0.0 {
        return Err(Error::invalid(format!("band half-width must be positive, got {half_width}")));
    }
    Ok(cloud
        .points
        .iter()
        .filter(|p| (p.y - center_height).abs() <= half_width)
        .map(|p| Vector2::new(p.x, p.z))
        .collect())
}

/// Drops points farther than `max_radius` from `center`.
pub fn filter_radius(points: &[Vector2<f64>], center: Vector2<f64>, max_radius: f64) -> Vec<Vector2<f64>> {
    points.iter().filter(|p| (*p - center).norm() <= max_radius).copied().collect()
}

/// Occupancy-count raster over the band points (see [`Raster2D::from_points`]).
pub fn rasterize(points: &[Vector2<f64>], resolution: f64) -> Result<Raster2D> {
    Raster2D::from_points(points, resolution)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractParams {
    pub canny: CannyParams,
    pub hough: HoughParams,
    /// Dilation radius (cells) applied to the binarized occupancy before
    /// edge detection. Thin point traces become bars with clean step edges.
    pub dilate_cells: usize,
    /// Collinear segments closer than this (cells, perpendicular) merge into
    /// their midline; fuses the twin edge responses of a single wall.
    pub merge_perp_cells: f64,
    /// Max orientation difference (radians) for the merge.
    pub merge_max_angle: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            canny: CannyParams::default(),
            hough: HoughParams::default(),
            dilate_cells: 1,
            merge_perp_cells: 4.5,
            merge_max_angle: 6f64.to_radians(),
        }
    }
}

/// Binarizes the occupancy raster and traces wall segments, returned in
/// meters in the raster's world frame.
pub fn extract_segments(raster: &Raster2D, params: &ExtractParams, seed: u64) -> SegmentSet {
    // Pad so edge responses at the raster rim survive non-maximum
    // suppression even after dilation.
    let pad = 2 + params.dilate_cells;
    let (w, h) = (raster.width + 2 * pad, raster.height + 2 * pad);
    let mut binary = Raster2D::zeros(w, h, raster.resolution, raster.origin).expect("resolution validated");
    for iy in 0..raster.height {
        for ix in 0..raster.width {
            if raster.get(ix, iy) >= 1.0 {
                binary.set(ix + pad, iy + pad, 255.0);
            }
        }
    }
    if params.dilate_cells > 0 {
        binary = dilate(&binary, params.dilate_cells);
    }
    let edges = canny_edges(&binary, &params.canny);
    let cells = probabilistic_hough(&edges, w, h, &params.hough, seed);
    let merged = merge_collinear(&cells, params.merge_perp_cells, params.merge_max_angle);
    let min_len = raster.resolution * 0.5;
    let offset = pad as f64;
    let (lo, hi) = raster.bounds();
    let segments = merged
        .into_iter()
        .map(|s| {
            Segment2::new(
                raster.origin + Vector2::new(s.a.0 - offset, s.a.1 - offset) * raster.resolution,
                raster.origin + Vector2::new(s.b.0 - offset, s.b.1 - offset) * raster.resolution,
            )
        })
        .filter_map(|s| clip_to_rect(&s, lo, hi))
        .filter(|s| s.length() > min_len)
        .collect();
    SegmentSet::new(segments, FrameTag::Observation)
}

/// Liang-Barsky clip of a segment against an axis-aligned rectangle.
fn clip_to_rect(s: &Segment2, lo: Vector2<f64>, hi: Vector2<f64>) -> Option<Segment2> {
    let d = s.b - s.a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-d.x, s.a.x - lo.x),
        (d.x, hi.x - s.a.x),
        (-d.y, s.a.y - lo.y),
        (d.y, hi.y - s.a.y),
    ] {
        if p.abs() < 1e-15 {
            if q < 0.0 {
                return None;
            }
            continue;
        }
        let r = q / p;
        if p < 0.0 {
            t0 = t0.max(r);
        } else {
            t1 = t1.min(r);
        }
        if t0 > t1 {
            return None;
        }
    }
    Some(Segment2::new(s.a + d * t0, s.a + d * t1))
}

fn dilate(raster: &Raster2D, radius: usize) -> Raster2D {
    let mut out = raster.clone();
    let r = radius as i64;
    for iy in 0..raster.height as i64 {
        for ix in 0..raster.width as i64 {
            if raster.values[iy as usize * raster.width + ix as usize] <= 0.0 {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (ix + dx, iy + dy);
                    if x >= 0 && y >= 0 && (x as usize) < raster.width && (y as usize) < raster.height {
                        out.values[y as usize * raster.width + x as usize] = 255.0;
                    }
                }
            }
        }
    }
    out
}

/// Greedily fuses near-parallel, near-coincident segments into their
/// length-weighted midline until a fixpoint.
fn merge_collinear(segments: &[CellSegment], max_perp: f64, max_angle: f64) -> Vec<CellSegment> {
    let mut segs: Vec<CellSegment> = segments.to_vec();
    loop {
        let mut merged_any = false;
        'outer: for i in 0..segs.len() {
            for j in (i + 1)..segs.len() {
                if let Some(m) = try_merge(&segs[i], &segs[j], max_perp, max_angle) {
                    segs[i] = m;
                    segs.swap_remove(j);
                    merged_any = true;
                    break 'outer;
                }
            }
        }
        if !merged_any {
            return segs;
        }
    }
}

fn try_merge(s1: &CellSegment, s2: &CellSegment, max_perp: f64, max_angle: f64) -> Option<CellSegment> {
    let dir = |s: &CellSegment| {
        let (dx, dy) = (s.b.0 - s.a.0, s.b.1 - s.a.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-12);
        (dx / len, dy / len, len)
    };
    let (u1x, u1y, len1) = dir(s1);
    let (u2x, u2y, len2) = dir(s2);
    let cross = (u1x * u2y - u1y * u2x).abs();
    if cross.asin() > max_angle {
        return None;
    }
    // Length-weighted mean direction (mod π).
    let sign = if u1x * u2x + u1y * u2y < 0.0 { -1.0 } else { 1.0 };
    let mut ux = len1 * u1x + sign * len2 * u2x;
    let mut uy = len1 * u1y + sign * len2 * u2y;
    let norm = (ux * ux + uy * uy).sqrt().max(1e-12);
    ux /= norm;
    uy /= norm;
    let centroid = (
        (len1 * (s1.a.0 + s1.b.0) + len2 * (s2.a.0 + s2.b.0)) / (2.0 * (len1 + len2)),
        (len1 * (s1.a.1 + s1.b.1) + len2 * (s2.a.1 + s2.b.1)) / (2.0 * (len1 + len2)),
    );
    // Perpendicular offsets of all endpoints from the midline.
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    let mut span1 = (f64::INFINITY, f64::NEG_INFINITY);
    let mut span2 = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, p) in [s1.a, s1.b, s2.a, s2.b].iter().enumerate() {
        let dx = p.0 - centroid.0;
        let dy = p.1 - centroid.1;
        let perp = (-uy * dx + ux * dy).abs();
        if perp > max_perp {
            return None;
        }
        let t = ux * dx + uy * dy;
        t_min = t_min.min(t);
        t_max = t_max.max(t);
        let span = if k < 2 { &mut span1 } else { &mut span2 };
        span.0 = span.0.min(t);
        span.1 = span.1.max(t);
    }
    // Projections must overlap (or nearly touch) along the line.
    if span1.1 < span2.0 - max_perp || span2.1 < span1.0 - max_perp {
        return None;
    }
    Some(CellSegment {
        a: (centroid.0 + t_min * ux, centroid.1 + t_min * uy),
        b: (centroid.0 + t_max * ux, centroid.1 + t_max * uy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::scale;
    use nalgebra::Vector3;

    #[test]
    fn band_boundaries_are_inclusive() {
        let cloud = PointCloud::new(vec![
            Vector3::new(1.0, 0.0, 2.0),   // exactly at camera height
            Vector3::new(1.0, -0.2, 2.0),  // 0.2 above (y down)
            Vector3::new(1.0, 0.1, 2.0),   // on the boundary
        ]);
        let band = slice_band(&cloud, 0.0, 0.1).unwrap();
        assert_eq!(band.len(), 2);
        assert_eq!(band[0], Vector2::new(1.0, 2.0));
    }

    #[test]
    fn box_room_slice_keeps_only_walls() {
        // Floor at y=1.5, ceiling at y=-1.3, walls spanning both.
        let mut pts = Vec::new();
        for i in 0..500 {
            let t = i as f64 / 500.0;
            pts.push(Vector3::new(t * 8.0 - 4.0, 1.5, t * 6.0 - 3.0)); // floor
            pts.push(Vector3::new(t * 8.0 - 4.0, -1.3, 3.0 - t * 6.0)); // ceiling
            pts.push(Vector3::new(4.0, t * 2.8 - 1.3, t * 6.0 - 3.0)); // wall
        }
        let band = slice_band(&PointCloud::new(pts), 0.0, 0.1).unwrap();
        assert!(!band.is_empty());
        for p in &band {
            assert!((p.x - 4.0).abs() < 1e-9, "non-wall point {p:?} leaked into the band");
        }
    }

    #[test]
    fn slice_commutes_with_scaling() {
        let cloud = PointCloud::new(
            (0..200)
                .map(|i| {
                    let t = i as f64 * 0.177;
                    Vector3::new(t.sin() * 3.0, (t * 1.3).sin() * 0.5, t.cos() * 3.0)
                })
                .collect(),
        );
        let lambda = 1.7;
        let direct = slice_band(&scale(&cloud, lambda).unwrap(), lambda * 0.1, lambda * 0.05).unwrap();
        let indirect: Vec<Vector2<f64>> =
            slice_band(&cloud, 0.1, 0.05).unwrap().iter().map(|p| p * lambda).collect();
        assert_eq!(direct.len(), indirect.len());
        for (a, b) in direct.iter().zip(&indirect) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_points_fail_rasterize() {
        assert!(rasterize(&[], 0.05).is_err());
    }

    #[test]
    fn horizontal_wall_trace_extracts_one_segment() {
        // 40 occupied cells in a row at 0.05 m resolution.
        let pts: Vec<Vector2<f64>> = (0..40).map(|i| Vector2::new(i as f64 * 0.05, 0.0)).collect();
        let raster = rasterize(&pts, 0.05).unwrap();
        let set = extract_segments(&raster, &ExtractParams::default(), 42);
        assert_eq!(set.len(), 1, "{:?}", set.segments);
        let s = set.segments[0];
        let angle = s.orientation().to_degrees().abs();
        assert!(angle <= 2.0, "orientation {angle}°");
        assert!((s.length() - 2.0).abs() <= 2.0 * 0.05, "length {}", s.length());
    }

    #[test]
    fn blank_raster_extracts_nothing() {
        let raster = Raster2D::zeros(30, 30, 0.05, Vector2::zeros()).unwrap();
        let set = extract_segments(&raster, &ExtractParams::default(), 1);
        assert!(set.is_empty());
    }

    #[test]
    fn l_shaped_trace_extracts_right_angle() {
        let mut pts: Vec<Vector2<f64>> = (0..36).map(|i| Vector2::new(i as f64 * 0.05, 0.0)).collect();
        pts.extend((0..36).map(|i| Vector2::new(0.0, i as f64 * 0.05)));
        let raster = rasterize(&pts, 0.05).unwrap();
        let set = extract_segments(&raster, &ExtractParams::default(), 9);
        assert_eq!(set.len(), 2, "{:?}", set.segments);
        let rel = (set.segments[0].orientation() - set.segments[1].orientation()).to_degrees().abs();
        let rel = rel.min(180.0 - rel);
        assert!((rel - 90.0).abs() <= 3.0, "relative orientation {rel}°");
    }

    #[test]
    fn endpoints_stay_inside_raster_bounds() {
        let pts: Vec<Vector2<f64>> = (0..60)
            .map(|i| {
                let t = i as f64 * 0.11;
                Vector2::new(t.sin() * 2.0, t.cos() * 2.0)
            })
            .collect();
        let raster = rasterize(&pts, 0.05).unwrap();
        let set = extract_segments(&raster, &ExtractParams::default(), 5);
        let (lo, hi) = raster.bounds();
        for s in &set.segments {
            for p in [s.a, s.b] {
                assert!(p.x >= lo.x - 1e-9 && p.x <= hi.x + 1e-9);
                assert!(p.y >= lo.y - 1e-9 && p.y <= hi.y + 1e-9);
            }
        }
    }

    #[test]
    fn rotating_points_rotates_orientations() {
        let base: Vec<Vector2<f64>> = (0..50).map(|i| Vector2::new(i as f64 * 0.05, 0.0)).collect();
        for delta_deg in [15.0f64, 40.0, 75.0] {
            let delta = delta_deg.to_radians();
            let rot: Vec<Vector2<f64>> = base
                .iter()
                .map(|p| Vector2::new(p.x * delta.cos() - p.y * delta.sin(), p.x * delta.sin() + p.y * delta.cos()))
                .collect();
            let raster = rasterize(&rot, 0.05).unwrap();
            let set = extract_segments(&raster, &ExtractParams::default(), 3);
            assert!(!set.is_empty());
            let got = set.segments[0].orientation().to_degrees();
            let want = if delta_deg >= 90.0 { delta_deg - 180.0 } else { delta_deg };
            let err = (got - want).abs().min((got - want + 180.0).abs()).min((got - want - 180.0).abs());
            assert!(err <= 3.0, "rotated by {delta_deg}°, extracted {got}°");
        }
    }
}
