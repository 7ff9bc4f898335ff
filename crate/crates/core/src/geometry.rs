//! Camera model, rigid transforms, and point-cloud containers.
//!
//! Conventions (fixed so file I/O is bit-exact): camera frame is +x right,
//! +y down, +z forward along the optical axis. Poses map camera coordinates
//! into a gravity-aligned world frame whose vertical axis is ±y; depth maps
//! store z-depth in meters with 0 or non-finite as the missing-value
//! sentinel.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics for a rectified image.
#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid(format!("focal lengths must be positive, got fx={fx}, fy={fy}")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::invalid(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Camera-frame ray through pixel (u, v) at depth d.
    pub fn back_project(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }

    /// Pixel and depth of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z))
    }
}

/// Rigid transform in SE(3): rotation then translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHONORMALITY_TOL: f64 = 1e-9;

impl Pose3 {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |R'R - I| = {dev:.3e})"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::invalid("rotation has negative determinant".to_string()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation about the world vertical (y) axis mapping camera forward
    /// (+z) to the in-plane heading `phi`, plus a translation.
    pub fn from_heading(phi: f64, position: Vector3<f64>) -> Self {
        let (s, c) = phi.sin_cos();
        // Columns: camera x (right), y (down), z (forward) in world coords.
        let rotation = Matrix3::new(
            s, 0.0, c, //
            0.0, 1.0, 0.0, //
            -c, 0.0, s,
        );
        Self { rotation, translation: position }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotates a direction without translating it.
    pub fn rotate(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let rt = self.rotation.transpose();
        Pose3 { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Dense z-depth grid with an optional keep-mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major meters; 0 or non-finite marks a missing pixel.
    pub depth: Vec<f32>,
    /// Row-major; `true` keeps the pixel. `None` keeps everything.
    pub mask: Option<Vec<bool>>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f32>, mask: Option<Vec<bool>>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::invalid(format!(
                "depth grid has {} entries, expected {}x{}",
                depth.len(),
                width,
                height
            )));
        }
        if let Some(m) = &mask {
            if m.len() != width * height {
                return Err(Error::invalid("mask dimensions do not match depth grid".to_string()));
            }
        }
        for (i, &d) in depth.iter().enumerate() {
            let kept = mask.as_ref().map_or(true, |m| m[i]);
            if kept && d.is_finite() && d < 0.0 {
                return Err(Error::invalid(format!("negative depth {d} at pixel {i}")));
            }
        }
        Ok(Self { width, height, depth, mask })
    }

    /// Depth at (u, v) if the pixel is kept and carries a valid value.
    pub fn sample(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        if let Some(m) = &self.mask {
            if !m[i] {
                return None;
            }
        }
        let d = self.depth[i];
        if d.is_finite() && d > 0.0 {
            Some(d as f64)
        } else {
            None
        }
    }

    /// Drops the mask, keeping every valid pixel.
    pub fn without_mask(&self) -> DepthMap {
        DepthMap { width: self.width, height: self.height, depth: self.depth.clone(), mask: None }
    }
}

/// 3D points in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }

    /// Horizontal (x, z) projection of every point.
    pub fn horizontal(&self) -> Vec<Vector2<f64>> {
        self.points.iter().map(|p| Vector2::new(p.x, p.z)).collect()
    }
}

/// Plane {p : normal · p = offset} with unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane3 {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane3 {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("plane normal has norm {n}, expected 1")));
        }
        Ok(Self { normal, offset })
    }

    /// Builds from any non-zero normal, renormalizing.
    pub fn from_unnormalized(normal: Vector3<f64>, point_on_plane: &Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if n < 1e-12 {
            return Err(Error::degenerate("zero-length plane normal".to_string()));
        }
        let unit = normal / n;
        Ok(Self { normal: unit, offset: unit.dot(point_on_plane) })
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Flips orientation so the normal has non-negative dot with `axis`.
    pub fn oriented_along(&self, axis: &Vector3<f64>) -> Plane3 {
        if self.normal.dot(axis) < 0.0 {
            Plane3 { normal: -self.normal, offset: -self.offset }
        } else {
            self.clone()
        }
    }
}

/// Unprojects kept pixels into a pose-transformed point cloud.
///
/// `stride` subsamples the pixel grid in both directions.
pub fn unproject(depth: &DepthMap, k: &Intrinsics, pose: &Pose3, stride: usize) -> Result<PointCloud> {
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::invalid(format!(
            "depth map {}x{} does not match intrinsics {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1".to_string()));
    }
    let mut points = Vec::new();
    for v in (0..depth.height).step_by(stride) {
        for u in (0..depth.width).step_by(stride) {
            if let Some(d) = depth.sample(u, v) {
                let cam = k.back_project(u as f64, v as f64, d);
                points.push(pose.apply(&cam));
            }
        }
    }
    Ok(PointCloud::new(points))
}

/// Applies a rigid transform to every point.
pub fn transform(cloud: &PointCloud, pose: &Pose3) -> PointCloud {
    PointCloud::new(cloud.points.iter().map(|p| pose.apply(p)).collect())
}

/// Multiplies every coordinate by `lambda > 0`.
pub fn scale(cloud: &PointCloud, lambda: f64) -> Result<PointCloud> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("scale factor must be positive, got {lambda}")));
    }
    Ok(PointCloud::new(cloud.points.iter().map(|p| p * lambda).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn random_pose(seed: u64) -> Pose3 {
        // Cheap deterministic pose from a seed; axis-angle keeps it in SO(3).
        let a = (seed as f64 * 0.7371).sin();
        let b = (seed as f64 * 1.9173).cos();
        let axis = nalgebra::Unit::new_normalize(Vector3::new(a, b, 0.3 + a * b));
        let rot = Rotation3::from_axis_angle(&axis, 0.3 + 1.3 * a.abs());
        Pose3::new(rot.into_inner(), Vector3::new(b, -a, 2.0 * a * b)).unwrap()
    }

    #[test]
    fn principal_point_ray() {
        let k = Intrinsics::new(100.0, 100.0, 0.0, 0.0, 1, 1).unwrap();
        let d = DepthMap::new(1, 1, vec![1.0], None).unwrap();
        let cloud = unproject(&d, &k, &Pose3::identity(), 1).unwrap();
        assert_eq!(cloud.len(), 1);
        assert!((cloud.points[0] - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn off_axis_pixel() {
        // Pixel (cx + fx, cy) at depth 2 lands at (2, 0, 2).
        let k = Intrinsics::new(50.0, 50.0, 10.0, 10.0, 61, 21).unwrap();
        let mut depth = vec![0.0f32; 61 * 21];
        depth[10 * 61 + 60] = 2.0;
        let d = DepthMap::new(61, 21, depth, None).unwrap();
        let cloud = unproject(&d, &k, &Pose3::identity(), 1).unwrap();
        assert_eq!(cloud.len(), 1);
        assert!((cloud.points[0] - Vector3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn masked_pixels_are_skipped() {
        let k = Intrinsics::new(50.0, 50.0, 1.0, 1.0, 3, 3).unwrap();
        let d = DepthMap::new(3, 3, vec![1.0; 9], Some(vec![false; 9])).unwrap();
        let cloud = unproject(&d, &k, &Pose3::identity(), 1).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let k = Intrinsics::new(50.0, 50.0, 1.0, 1.0, 4, 3).unwrap();
        let d = DepthMap::new(3, 3, vec![1.0; 9], None).unwrap();
        assert!(matches!(unproject(&d, &k, &Pose3::identity(), 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn unprojection_roundtrip() {
        let k = Intrinsics::new(320.0, 300.0, 160.5, 120.25, 320, 240).unwrap();
        for seed in 0..20u64 {
            let pose = random_pose(seed);
            let u = (seed as f64 * 13.7) % 320.0;
            let v = (seed as f64 * 7.3) % 240.0;
            let d = 0.5 + (seed as f64) * 0.37;
            let world = pose.apply(&k.back_project(u, v, d));
            let cam = pose.inverse().apply(&world);
            let (pu, pv, pd) = k.project(&cam).unwrap();
            assert!((pu - u).abs() < 0.5 && (pv - v).abs() < 0.5, "pixel drifted");
            assert!((pd - d).abs() < 1e-9, "depth drifted");
        }
    }

    #[test]
    fn transform_identity_and_translation() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)]);
        let same = transform(&cloud, &Pose3::identity());
        assert_eq!(same, cloud);
        let moved = transform(&cloud, &Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        assert!((moved.points[0] - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let cloud = PointCloud::new(
            (0..17).map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, -(i as f64) * 0.5)).collect(),
        );
        for seed in 0..10u64 {
            let t1 = random_pose(seed);
            let t2 = random_pose(seed + 100);
            let once = transform(&cloud, &t1.compose(&t2));
            let twice = transform(&transform(&cloud, &t2), &t1);
            for (a, b) in once.points.iter().zip(&twice.points) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn transform_is_rigid() {
        let cloud = PointCloud::new(
            (0..25).map(|i| Vector3::new((i % 5) as f64, (i / 5) as f64, (i as f64).sqrt())).collect(),
        );
        let moved = transform(&cloud, &random_pose(7));
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let before = (cloud.points[i] - cloud.points[j]).norm();
                let after = (moved.points[i] - moved.points[j]).norm();
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scale_semantics() {
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 1.0, 1.0)]);
        assert_eq!(scale(&cloud, 1.0).unwrap(), cloud);
        let doubled = scale(&cloud, 2.0).unwrap();
        assert!((doubled.points[0] - Vector3::new(2.0, 2.0, 2.0)).norm() < 1e-15);
        assert!(scale(&cloud, 0.0).is_err());
        assert!(scale(&cloud, -1.0).is_err());
    }

    #[test]
    fn scale_composes_multiplicatively() {
        let cloud = PointCloud::new((0..9).map(|i| Vector3::new(i as f64, 1.0, -2.0)).collect());
        let ab = scale(&scale(&cloud, 1.7).unwrap(), 0.4).unwrap();
        let direct = scale(&cloud, 1.7 * 0.4).unwrap();
        for (a, b) in ab.points.iter().zip(&direct.points) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pose_rejects_non_orthonormal() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose3::new(bad, Vector3::zeros()).is_err());
    }

    #[test]
    fn heading_pose_points_forward() {
        let pose = Pose3::from_heading(0.0, Vector3::zeros());
        let fwd = pose.rotate(&Vector3::new(0.0, 0.0, 1.0));
        assert!((fwd - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let pose = Pose3::from_heading(std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let fwd = pose.rotate(&Vector3::new(0.0, 0.0, 1.0));
        assert!((fwd - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((pose.rotation().determinant() - 1.0).abs() < 1e-12);
    }
}
