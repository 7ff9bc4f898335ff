//! Vector floor plan with derived wall and free-space rasters.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::raster::{supercover_cells, Raster2D};
use crate::segments::{FrameTag, Segment2, SegmentSet};

/// A building floor plan: exact wall segments plus two rasters derived from
/// them — a wall-occupancy bitmap and the flood-filled traversable region.
#[derive(Debug, Clone)]
pub struct FloorPlan {
    pub vector: SegmentSet,
    /// 1.0 where a wall crosses the cell.
    pub walls: Raster2D,
    /// 1.0 where the cell is reachable free space.
    pub traversable: Raster2D,
    /// Interior point the flood fill started from.
    pub seed_point: Vector2<f64>,
}

impl FloorPlan {
    /// Rasterizes `segments` at `resolution` and flood-fills free space from
    /// `seed_point` (4-connected, walls block).
    pub fn build(segments: Vec<Segment2>, resolution: f64, seed_point: Vector2<f64>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("a floor plan needs at least one wall segment".to_string()));
        }
        if resolution <= 0.0 {
            return Err(Error::invalid(format!("plan resolution must be positive, got {resolution}")));
        }
        let mut min = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in &segments {
            for p in [s.a, s.b] {
                min.x = min.x.min(p.x);
                min.y = min.y.min(p.y);
                max.x = max.x.max(p.x);
                max.y = max.y.max(p.y);
            }
        }
        min.x = min.x.min(seed_point.x);
        min.y = min.y.min(seed_point.y);
        max.x = max.x.max(seed_point.x);
        max.y = max.y.max(seed_point.y);

        let pad = 2.0 * resolution;
        let origin = Vector2::new(min.x - pad, min.y - pad);
        let width = ((max.x - min.x + 2.0 * pad) / resolution).ceil() as usize + 1;
        let height = ((max.y - min.y + 2.0 * pad) / resolution).ceil() as usize + 1;
        let mut walls = Raster2D::zeros(width, height, resolution, origin)?;
        for s in &segments {
            let a = ((s.a.x - origin.x) / resolution, (s.a.y - origin.y) / resolution);
            let b = ((s.b.x - origin.x) / resolution, (s.b.y - origin.y) / resolution);
            for (ix, iy) in supercover_cells(a, b, width, height) {
                walls.set(ix, iy, 1.0);
            }
        }

        let mut traversable = Raster2D::zeros(width, height, resolution, origin)?;
        let Some(seed_cell) = walls.world_to_cell(&seed_point) else {
            return Err(Error::invalid("flood-fill seed point lies outside the plan bounds".to_string()));
        };
        if walls.get(seed_cell.0, seed_cell.1) > 0.0 {
            return Err(Error::invalid("flood-fill seed point lies on a wall".to_string()));
        }
        let mut stack = vec![seed_cell];
        traversable.set(seed_cell.0, seed_cell.1, 1.0);
        while let Some((x, y)) = stack.pop() {
            let neighbors = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbors {
                if nx < width && ny < height && traversable.get(nx, ny) == 0.0 && walls.get(nx, ny) == 0.0 {
                    traversable.set(nx, ny, 1.0);
                    stack.push((nx, ny));
                }
            }
        }

        Ok(Self { vector: SegmentSet::new(segments, FrameTag::FloorPlan), walls, traversable, seed_point })
    }

    pub fn resolution(&self) -> f64 {
        self.walls.resolution
    }

    pub fn is_traversable(&self, p: &Vector2<f64>) -> bool {
        self.walls.world_to_cell(p).map_or(false, |(x, y)| self.traversable.get(x, y) > 0.0)
    }

    /// Cell indices of every traversable cell, row-major order.
    pub fn traversable_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for iy in 0..self.traversable.height {
            for ix in 0..self.traversable.width {
                if self.traversable.get(ix, iy) > 0.0 {
                    cells.push((ix, iy));
                }
            }
        }
        cells
    }

    /// True when the straight move from `from` to `to` stays inside free
    /// space and crosses no wall cell.
    pub fn move_is_free(&self, from: &Vector2<f64>, to: &Vector2<f64>) -> bool {
        let res = self.resolution();
        let a = ((from.x - self.walls.origin.x) / res, (from.y - self.walls.origin.y) / res);
        let b = ((to.x - self.walls.origin.x) / res, (to.y - self.walls.origin.y) / res);
        let cells = supercover_cells(a, b, self.walls.width, self.walls.height);
        if cells.is_empty() {
            return false;
        }
        for (x, y) in cells {
            if self.walls.get(x, y) > 0.0 {
                return false;
            }
        }
        self.is_traversable(to)
    }
}

/// Axis-aligned rectangle walls (x0, y0) – (x1, y1).
pub fn rect_walls(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Segment2> {
    vec![
        Segment2::new(Vector2::new(x0, y0), Vector2::new(x1, y0)),
        Segment2::new(Vector2::new(x1, y0), Vector2::new(x1, y1)),
        Segment2::new(Vector2::new(x1, y1), Vector2::new(x0, y1)),
        Segment2::new(Vector2::new(x0, y1), Vector2::new(x0, y0)),
    ]
}
