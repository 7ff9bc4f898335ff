//! File formats and atomic writers.
//!
//! Binary rasters use a 16-byte header — an 8-byte magic, then width and
//! height as little-endian u32 — followed by the row-major payload:
//! little-endian f32 for depth/heatmap grids, one byte per cell for masks.
//! Everything structured (manifests, plans, configs, results) is JSON.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::filter::{OdometryStep, RunFlags, TrajectoryMetrics};
use crate::floorplan::FloorPlan;
use crate::geometry::{DepthMap, Intrinsics, Pose3};
use crate::matching::{HeatmapStack, PoseEstimate};
use crate::raster::Raster2D;
use crate::scale::ScaleReport;
use crate::segments::Segment2;
use crate::synth::EvalReport;

pub const DEPTH_MAGIC: &[u8; 8] = b"FLDEPTH\0";
pub const HEAT_MAGIC: &[u8; 8] = b"FLHEAT\0\0";
pub const MASK_MAGIC: &[u8; 8] = b"FLMASK\0\0";

/// Writes via a temp file in the same directory, then renames into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn header(magic: &[u8; 8], width: usize, height: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(16);
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(width as u32).to_le_bytes());
    bytes.extend_from_slice(&(height as u32).to_le_bytes());
    bytes
}

fn read_header(bytes: &[u8], magic: &[u8; 8], path: &Path) -> Result<(usize, usize)> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Parse(format!("{}: bad or missing magic", path.display())));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    Ok((width, height))
}

pub fn write_f32_grid(path: &Path, magic: &[u8; 8], width: usize, height: usize, values: &[f32]) -> Result<()> {
    let mut bytes = header(magic, width, height);
    bytes.reserve(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_f32_grid(path: &Path, magic: &[u8; 8]) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let (width, height) = read_header(&bytes, magic, path)?;
    let expected = 16 + width * height * 4;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "{}: {} bytes for a {width}x{height} grid (expected {expected})",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((width, height, values))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let mut bytes = header(MASK_MAGIC, width, height);
    bytes.extend(mask.iter().map(|&b| b as u8));
    atomic_write(path, &bytes)
}

pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = fs::read(path)?;
    let (width, height) = read_header(&bytes, MASK_MAGIC, path)?;
    if bytes.len() != 16 + width * height {
        return Err(Error::Parse(format!("{}: truncated mask payload", path.display())));
    }
    Ok((width, height, bytes[16..].iter().map(|&b| b != 0).collect()))
}

/// 8-bit binary PGM, min-max normalized; for inspection only.
pub fn write_pgm(path: &Path, raster: &Raster2D) -> Result<()> {
    let lo = raster.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raster.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    bytes.extend(raster.values.iter().map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8));
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// Observation bundles

#[derive(Debug, Clone)]
pub struct Frame {
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub pose: Pose3,
}

#[derive(Debug, Clone, Default)]
pub struct ObservationBundle {
    pub frames: Vec<Frame>,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
    intrinsics: IntrinsicsRecord,
    /// Row-major 4x4 camera-to-world transform.
    pose: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    frames: Vec<FrameRecord>,
}

pub fn write_bundle(dir: &Path, bundle: &ObservationBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(bundle.frames.len());
    for (i, frame) in bundle.frames.iter().enumerate() {
        let depth_name = format!("frame_{i:03}.depth");
        write_f32_grid(
            &dir.join(&depth_name),
            DEPTH_MAGIC,
            frame.depth.width,
            frame.depth.height,
            &frame.depth.depth,
        )?;
        let mask_name = frame.depth.mask.as_ref().map(|mask| {
            let name = format!("frame_{i:03}.mask");
            (name, mask)
        });
        if let Some((name, mask)) = &mask_name {
            write_mask(&dir.join(name), frame.depth.width, frame.depth.height, mask)?;
        }
        let r = frame.pose.rotation();
        let t = frame.pose.translation();
        #[rustfmt::skip]
        let pose = vec![
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ];
        records.push(FrameRecord {
            depth: depth_name,
            mask: mask_name.map(|(name, _)| name),
            intrinsics: IntrinsicsRecord {
                fx: frame.intrinsics.fx,
                fy: frame.intrinsics.fy,
                cx: frame.intrinsics.cx,
                cy: frame.intrinsics.cy,
                width: frame.intrinsics.width,
                height: frame.intrinsics.height,
            },
            pose,
        });
    }
    let manifest = BundleManifest { frames: records };
    atomic_write(&dir.join("manifest.json"), &to_json_pretty(&manifest)?)
}

pub fn read_bundle(dir: &Path) -> Result<ObservationBundle> {
    let manifest_path = dir.join("manifest.json");
    let manifest: BundleManifest = from_json_file(&manifest_path)?;
    if manifest.frames.is_empty() {
        return Err(Error::Parse(format!("{}: bundle has no frames", manifest_path.display())));
    }
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for record in manifest.frames {
        let (w, h, depth) = read_f32_grid(&dir.join(&record.depth), DEPTH_MAGIC)?;
        let mask = match &record.mask {
            Some(name) => {
                let (mw, mh, m) = read_mask(&dir.join(name))?;
                if (mw, mh) != (w, h) {
                    return Err(Error::Parse(format!("{name}: mask dimensions differ from depth")));
                }
                Some(m)
            }
            None => None,
        };
        if record.pose.len() != 16 {
            return Err(Error::Parse(format!("{}: pose must hold 16 numbers", record.depth)));
        }
        let p = &record.pose;
        if p[12] != 0.0 || p[13] != 0.0 || p[14] != 0.0 || p[15] != 1.0 {
            return Err(Error::Parse(format!("{}: last pose row must be [0, 0, 0, 1]", record.depth)));
        }
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            p[0], p[1], p[2],
            p[4], p[5], p[6],
            p[8], p[9], p[10],
        );
        let pose = Pose3::new(rotation, Vector3::new(p[3], p[7], p[11]))
            .map_err(|e| Error::Parse(format!("{}: {e}", record.depth)))?;
        let k = record.intrinsics;
        let intrinsics = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)
            .map_err(|e| Error::Parse(format!("{}: {e}", record.depth)))?;
        let depth = DepthMap::new(w, h, depth, mask).map_err(|e| Error::Parse(format!("{}: {e}", record.depth)))?;
        frames.push(Frame { depth, intrinsics, pose });
    }
    Ok(ObservationBundle { frames })
}

// ---------------------------------------------------------------------------
// Floor plans

#[derive(Serialize, Deserialize)]
struct PlanFile {
    units: String,
    resolution: f64,
    seed_point: [f64; 2],
    segments: Vec<[f64; 4]>,
}

pub fn write_plan(path: &Path, plan: &FloorPlan) -> Result<()> {
    let file = PlanFile {
        units: "meters".to_string(),
        resolution: plan.resolution(),
        seed_point: [plan.seed_point.x, plan.seed_point.y],
        segments: plan.vector.segments.iter().map(|s| [s.a.x, s.a.y, s.b.x, s.b.y]).collect(),
    };
    atomic_write(path, &to_json_pretty(&file)?)
}

pub fn read_plan(path: &Path) -> Result<FloorPlan> {
    let file: PlanFile = from_json_file(path)?;
    if file.units != "meters" {
        return Err(Error::Parse(format!("{}: units must be \"meters\", got {:?}", path.display(), file.units)));
    }
    if file.segments.is_empty() {
        return Err(Error::Parse(format!("{}: plan needs at least one segment", path.display())));
    }
    let segments = file
        .segments
        .iter()
        .map(|&[x1, y1, x2, y2]| Segment2::new(Vector2::new(x1, y1), Vector2::new(x2, y2)))
        .collect();
    FloorPlan::build(segments, file.resolution, Vector2::new(file.seed_point[0], file.seed_point[1]))
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Heatmap stacks

#[derive(Serialize, Deserialize)]
struct StackSidecar {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    thetas: Vec<f64>,
    maps: Vec<String>,
    traversable: String,
}

pub fn write_stack(dir: &Path, stack: &HeatmapStack) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut map_names = Vec::with_capacity(stack.maps.len());
    for (i, map) in stack.maps.iter().enumerate() {
        let name = format!("heatmap_{i:02}.heat");
        let values: Vec<f32> = map.values.iter().map(|&v| v as f32).collect();
        write_f32_grid(&dir.join(&name), HEAT_MAGIC, map.width, map.height, &values)?;
        map_names.push(name);
    }
    write_mask(&dir.join("traversable.mask"), stack.width(), stack.height(), &stack.traversable)?;
    let sidecar = StackSidecar {
        width: stack.width(),
        height: stack.height(),
        resolution: stack.resolution(),
        origin: [stack.origin().x, stack.origin().y],
        thetas: stack.thetas.clone(),
        maps: map_names,
        traversable: "traversable.mask".to_string(),
    };
    atomic_write(&dir.join("stack.json"), &to_json_pretty(&sidecar)?)
}

pub fn read_stack(dir: &Path) -> Result<HeatmapStack> {
    let sidecar_path = dir.join("stack.json");
    if !sidecar_path.exists() {
        return Err(Error::Parse(format!(
            "{}: no heatmap stack here (missing stack.json) — run `localize` first",
            dir.display()
        )));
    }
    let sidecar: StackSidecar = from_json_file(&sidecar_path)?;
    let origin = Vector2::new(sidecar.origin[0], sidecar.origin[1]);
    let mut maps = Vec::with_capacity(sidecar.maps.len());
    for name in &sidecar.maps {
        let (w, h, values) = read_f32_grid(&dir.join(name), HEAT_MAGIC)?;
        if (w, h) != (sidecar.width, sidecar.height) {
            return Err(Error::Parse(format!("{name}: dimensions differ from the sidecar")));
        }
        let mut map = Raster2D::zeros(w, h, sidecar.resolution, origin)?;
        map.values = values.iter().map(|&v| v as f64).collect();
        maps.push(map);
    }
    if maps.is_empty() || maps.len() != sidecar.thetas.len() {
        return Err(Error::Parse(format!("{}: map/theta count mismatch", sidecar_path.display())));
    }
    let (mw, mh, traversable) = read_mask(&dir.join(&sidecar.traversable))?;
    if (mw, mh) != (sidecar.width, sidecar.height) {
        return Err(Error::Parse("traversable mask dimensions differ from the sidecar".to_string()));
    }
    Ok(HeatmapStack { maps, thetas: sidecar.thetas, traversable })
}

// ---------------------------------------------------------------------------
// Odometry, ground truth, configs, results

#[derive(Serialize, Deserialize)]
struct OdometryFile {
    /// (forward meters, heading change radians) per step.
    steps: Vec<[f64; 2]>,
}

pub fn write_odometry(path: &Path, steps: &[OdometryStep]) -> Result<()> {
    let file = OdometryFile { steps: steps.iter().map(|s| [s.forward, s.heading]).collect() };
    atomic_write(path, &to_json_pretty(&file)?)
}

pub fn read_odometry(path: &Path) -> Result<Vec<OdometryStep>> {
    let file: OdometryFile = from_json_file(path)?;
    file.steps
        .iter()
        .map(|&[f, h]| OdometryStep::new(f, h).map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PosesFile {
    poses: Vec<[f64; 3]>,
}

pub fn write_poses(path: &Path, poses: &[PoseEstimate]) -> Result<()> {
    let file = PosesFile { poses: poses.iter().map(|p| [p.x, p.y, p.theta]).collect() };
    atomic_write(path, &to_json_pretty(&file)?)
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseEstimate>> {
    let file: PosesFile = from_json_file(path)?;
    Ok(file.poses.iter().map(|&[x, y, t]| PoseEstimate::new(x, y, t, 0.0)).collect())
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = from_json_file(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    atomic_write(path, &to_json_pretty(cfg)?)
}

/// Result record of a `localize` run.
#[derive(Debug, Serialize, Deserialize)]
pub struct LocalizeResult {
    pub pose: PoseEstimate,
    pub candidate_thetas: Vec<f64>,
    pub observed_segments: usize,
    pub scale_report: ScaleReport,
    pub seed: u64,
}

/// Result record of a `track` run.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrackResult {
    pub estimates: Vec<PoseEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<TrajectoryMetrics>,
    pub flags: RunFlags,
    pub seed: u64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, &to_json_pretty(value)?)
}

pub fn read_eval_report(path: &Path) -> Result<EvalReport> {
    from_json_file(path)
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn from_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut file = fs::File::open(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut text = String::new();
    file.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Output paths of a `localize` run within its output directory.
pub struct LocalizeLayout {
    pub dir: PathBuf,
}

impl LocalizeLayout {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn stack_dir(&self) -> PathBuf {
        self.dir.join("stack")
    }

    pub fn pdf_dir(&self) -> PathBuf {
        self.dir.join("pdf")
    }

    pub fn result(&self) -> PathBuf {
        self.dir.join("result.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::rect_walls;
    use tempfile::tempdir;

    fn sample_bundle() -> ObservationBundle {
        let k = Intrinsics::new(60.0, 60.0, 15.5, 11.5, 32, 24).unwrap();
        let mut depth = vec![0.0f32; 32 * 24];
        for (i, d) in depth.iter_mut().enumerate() {
            *d = 1.0 + (i % 7) as f32 * 0.25;
        }
        let mut mask = vec![true; 32 * 24];
        mask[5] = false;
        let pose = Pose3::from_heading(0.7, Vector3::new(0.1, -0.2, 0.3));
        let frame = Frame {
            depth: DepthMap::new(32, 24, depth.clone(), Some(mask)).unwrap(),
            intrinsics: k.clone(),
            pose,
        };
        let frame2 = Frame {
            depth: DepthMap::new(32, 24, depth, None).unwrap(),
            intrinsics: k,
            pose: Pose3::identity(),
        };
        ObservationBundle { frames: vec![frame, frame2] }
    }

    #[test]
    fn bundle_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let bundle = sample_bundle();
        write_bundle(dir.path(), &bundle).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 2);
        for (a, b) in bundle.frames.iter().zip(&back.frames) {
            assert_eq!(a.depth, b.depth, "depth grid drifted");
            assert_eq!(a.intrinsics, b.intrinsics);
            assert!((a.pose.rotation() - b.pose.rotation()).abs().max() < 1e-15);
            assert!((a.pose.translation() - b.pose.translation()).norm() < 1e-15);
        }
    }

    #[test]
    fn plan_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let plan = FloorPlan::build(rect_walls(0.0, 0.0, 7.3, 5.1), 0.1, Vector2::new(3.0, 2.0)).unwrap();
        let path = dir.path().join("plan.json");
        write_plan(&path, &plan).unwrap();
        let back = read_plan(&path).unwrap();
        assert_eq!(plan.vector.segments, back.vector.segments);
        assert_eq!(plan.walls.values, back.walls.values);
        assert_eq!(plan.seed_point, back.seed_point);
    }

    #[test]
    fn stack_roundtrip_preserves_f32_payload() {
        let dir = tempdir().unwrap();
        let mut m = Raster2D::zeros(6, 5, 0.1, Vector2::new(-1.0, 2.0)).unwrap();
        for (i, v) in m.values.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin() as f64; // representable in f32
        }
        let stack = HeatmapStack {
            maps: vec![m.clone(), m],
            thetas: vec![0.0, 1.5],
            traversable: (0..30).map(|i| i % 3 != 0).collect(),
        };
        write_stack(dir.path(), &stack).unwrap();
        let back = read_stack(dir.path()).unwrap();
        assert_eq!(back.thetas, stack.thetas);
        assert_eq!(back.traversable, stack.traversable);
        for (a, b) in back.maps[0].values.iter().zip(&stack.maps[0].values) {
            assert_eq!(*a as f32, *b as f32, "f32 payload drifted");
        }
        assert_eq!(back.maps[0].origin, stack.maps[0].origin);
    }

    #[test]
    fn missing_stack_mentions_localize() {
        let dir = tempdir().unwrap();
        let err = read_stack(dir.path()).unwrap_err().to_string();
        assert!(err.contains("localize"), "{err}");
    }

    #[test]
    fn odometry_roundtrip_and_gate() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("odo.json");
        let steps = vec![OdometryStep::new(0.5, 0.1).unwrap(), OdometryStep::new(-0.2, -0.4).unwrap()];
        write_odometry(&path, &steps).unwrap();
        assert_eq!(read_odometry(&path).unwrap(), steps);

        atomic_write(&path, br#"{"steps": [[10.0, 0.0]]}"#).unwrap();
        let err = read_odometry(&path).unwrap_err().to_string();
        assert!(err.contains("sanity gate"), "{err}");
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = RunConfig::default();
        write_config(&path, &cfg).unwrap();
        read_config(&path).unwrap();

        atomic_write(&path, br#"{"alpha": -3.0}"#).unwrap();
        let err = read_config(&path).unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");
    }

    #[test]
    fn pgm_has_valid_header() {
        let dir = tempdir().unwrap();
        let mut m = Raster2D::zeros(4, 3, 1.0, Vector2::zeros()).unwrap();
        m.set(2, 1, 9.0);
        let path = dir.path().join("map.pgm");
        write_pgm(&path, &m).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 12);
        assert_eq!(*bytes.last().unwrap(), 0);
    }

    #[test]
    fn corrupt_magic_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.depth");
        atomic_write(&path, b"NOTMAGIC\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        assert!(matches!(read_f32_grid(&path, DEPTH_MAGIC), Err(Error::Parse(_))));
    }
}
