//! Floor-plan indoor localization from a stationary depth scan.
//!
//! The pipeline turns posed depth maps into a scale-corrected 3D point
//! cloud, slices it into 2D wall geometry, and scores every candidate
//! pose on a vector floor plan by convolving the plan with kernels built
//! from the observed walls. The result is a stack of per-orientation
//! heatmaps: a posterior over (x, y, θ) that can be read off directly
//! (argmax) or fed to a particle filter that tracks the user along an
//! odometry trajectory.
//!
//! Module map:
//! - [`geometry`] — camera unprojection, rigid transforms, point clouds
//! - [`scale`] — per-view scale optimization and ground-plane anchoring
//! - [`segments`] — band slicing, rasterization, wall segment extraction
//! - [`matching`] — kernel construction and floor-plan correlation
//! - [`filter`] — heatmap-initialized particle filter
//! - [`synth`] — floor-plan generation, ray casting, evaluation harness
//! - [`io`] — file formats and the end-to-end [`pipeline`] entry points

pub mod canny;
pub mod config;
pub mod correlate;
pub mod error;
pub mod filter;
pub mod floorplan;
pub mod geometry;
pub mod hough;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod raster;
pub mod scale;
pub mod segments;
pub mod spatial;
pub mod synth;

mod optim;

pub use error::{Error, Result};
pub use floorplan::FloorPlan;
pub use geometry::{DepthMap, Intrinsics, Plane3, PointCloud, Pose3};
pub use matching::{HeatmapStack, PoseEstimate};
pub use raster::Raster2D;
pub use segments::{FrameTag, Segment2, SegmentSet};
