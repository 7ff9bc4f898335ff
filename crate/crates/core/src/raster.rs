//! Row-major 2D grids over a metric frame.
//!
//! `origin` is the world position of cell (0, 0)'s center; cell (ix, iy)
//! covers the square centered at `origin + (ix, iy) * resolution`. World →
//! cell conversion therefore rounds to the nearest cell center.

use nalgebra::Vector2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster2D {
    pub width: usize,
    pub height: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// World position of the center of cell (0, 0).
    pub origin: Vector2<f64>,
    /// Row-major: `values[iy * width + ix]`.
    pub values: Vec<f64>,
}

impl Raster2D {
    pub fn zeros(width: usize, height: usize, resolution: f64, origin: Vector2<f64>) -> Result<Self> {
        if resolution <= 0.0 {
            return Err(Error::invalid(format!("raster resolution must be positive, got {resolution}")));
        }
        Ok(Self { width, height, resolution, origin, values: vec![0.0; width * height] })
    }

    /// Occupancy-count raster over the points' bounding box padded by one cell.
    pub fn from_points(points: &[Vector2<f64>], resolution: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot rasterize an empty point set".to_string()));
        }
        if resolution <= 0.0 {
            return Err(Error::invalid(format!("raster resolution must be positive, got {resolution}")));
        }
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        // Cell edges at origin - res/2 + k*res; the grid spans the bbox plus
        // one padding cell on every side.
        let origin = Vector2::new(min_x - resolution, min_y - resolution);
        let width = ((max_x - min_x) / resolution + 1.0).floor() as usize + 2;
        let height = ((max_y - min_y) / resolution + 1.0).floor() as usize + 2;
        let mut raster = Self::zeros(width, height, resolution, origin)?;
        for p in points {
            if let Some((ix, iy)) = raster.world_to_cell(p) {
                raster.values[iy * width + ix] += 1.0;
            }
        }
        Ok(raster)
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.width + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.values[iy * self.width + ix] = v;
    }

    /// Nearest cell containing the world point, if inside the grid.
    pub fn world_to_cell(&self, p: &Vector2<f64>) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.resolution + 0.5;
        let fy = (p.y - self.origin.y) / self.resolution + 0.5;
        let ix = fx.floor() as i64;
        let iy = fy.floor() as i64;
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            None
        } else {
            Some((ix as usize, iy as usize))
        }
    }

    /// World position of a cell center.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Vector2<f64> {
        self.origin + Vector2::new(ix as f64, iy as f64) * self.resolution
    }

    /// World extent covered by the grid (outer cell edges).
    pub fn bounds(&self) -> (Vector2<f64>, Vector2<f64>) {
        let half = 0.5 * self.resolution;
        let lo = self.origin - Vector2::new(half, half);
        let hi = self.cell_center(self.width - 1, self.height - 1) + Vector2::new(half, half);
        (lo, hi)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// In-place separable Gaussian blur; `sigma` in cells. No-op for sigma <= 0.
    pub fn gaussian_blur(&mut self, sigma: f64) {
        if sigma <= 0.0 || self.values.is_empty() {
            return;
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        for k in -radius..=radius {
            kernel.push((-0.5 * (k as f64 / sigma).powi(2)).exp());
        }
        let sum: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|v| v / sum).collect();

        let (w, h) = (self.width as i64, self.height as i64);
        let mut tmp = vec![0.0f64; self.values.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = x + ki as i64 - radius;
                    if sx >= 0 && sx < w {
                        acc += kv * self.values[(y * w + sx) as usize];
                    }
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = y + ki as i64 - radius;
                    if sy >= 0 && sy < h {
                        acc += kv * tmp[(sy * w + x) as usize];
                    }
                }
                self.values[(y * w + x) as usize] = acc;
            }
        }
    }
}

/// All cells a segment passes through (supercover DDA), clipped to a
/// `width` x `height` grid. Endpoints are in cell coordinates where integer
/// values are cell centers.
pub fn supercover_cells(
    a: (f64, f64),
    b: (f64, f64),
    width: usize,
    height: usize,
) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let steps = (dx.abs().max(dy.abs()) * 2.0).ceil() as usize + 1;
    let mut last: Option<(i64, i64)> = None;
    let push = |cx: i64, cy: i64, cells: &mut Vec<(usize, usize)>| {
        if cx >= 0 && cy >= 0 && (cx as usize) < width && (cy as usize) < height {
            cells.push((cx as usize, cy as usize));
        }
    };
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let cx = (a.0 + t * dx + 0.5).floor() as i64;
        let cy = (a.1 + t * dy + 0.5).floor() as i64;
        if last == Some((cx, cy)) {
            continue;
        }
        // Bridge diagonal sample jumps so the rasterized line is
        // edge-connected (the flood fill must not leak through corners).
        if let Some((px, py)) = last {
            if (cx - px).abs() == 1 && (cy - py).abs() == 1 {
                push(cx, py, &mut cells);
            }
        }
        last = Some((cx, cy));
        push(cx, cy, &mut cells);
    }
    cells.dedup();
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_gives_padded_3x3() {
        let raster = Raster2D::from_points(&[Vector2::new(2.0, -1.0)], 0.5).unwrap();
        assert_eq!((raster.width, raster.height), (3, 3));
        assert_eq!(raster.get(1, 1), 1.0);
        assert_eq!(raster.values.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn two_points_one_meter_apart() {
        let pts = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0)];
        let raster = Raster2D::from_points(&pts, 0.5).unwrap();
        let a = raster.world_to_cell(&pts[0]).unwrap();
        let b = raster.world_to_cell(&pts[1]).unwrap();
        assert_eq!((b.0 - a.0, b.1, a.1), (2, 1, 1));
        assert_eq!(raster.values.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn count_is_conserved() {
        let pts: Vec<Vector2<f64>> =
            (0..57).map(|i| Vector2::new((i as f64 * 0.913).sin() * 4.0, (i as f64 * 1.7).cos() * 3.0)).collect();
        let raster = Raster2D::from_points(&pts, 0.2).unwrap();
        assert_eq!(raster.values.iter().sum::<f64>(), pts.len() as f64);
    }

    #[test]
    fn world_cell_roundtrip() {
        let raster = Raster2D::zeros(10, 8, 0.25, Vector2::new(-1.0, 2.0)).unwrap();
        for iy in 0..8 {
            for ix in 0..10 {
                let c = raster.cell_center(ix, iy);
                assert_eq!(raster.world_to_cell(&c), Some((ix, iy)));
            }
        }
        assert_eq!(raster.world_to_cell(&Vector2::new(100.0, 0.0)), None);
    }

    #[test]
    fn blur_preserves_mass_away_from_borders() {
        let mut raster = Raster2D::zeros(21, 21, 1.0, Vector2::zeros()).unwrap();
        raster.set(10, 10, 1.0);
        raster.gaussian_blur(1.5);
        let sum: f64 = raster.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-4);
        // Peak stays at the impulse.
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for iy in 0..21 {
            for ix in 0..21 {
                if raster.get(ix, iy) > best_v {
                    best_v = raster.get(ix, iy);
                    best = (ix, iy);
                }
            }
        }
        assert_eq!(best, (10, 10));
    }

    #[test]
    fn supercover_is_edge_connected() {
        let cells = supercover_cells((0.0, 0.0), (7.0, 4.0), 10, 10);
        for pair in cells.windows(2) {
            let dx = (pair[0].0 as i64 - pair[1].0 as i64).abs();
            let dy = (pair[0].1 as i64 - pair[1].1 as i64).abs();
            assert!(dx + dy <= 1, "diagonal jump between {:?} and {:?}", pair[0], pair[1]);
        }
        assert_eq!(cells.first(), Some(&(0, 0)));
        assert_eq!(cells.last(), Some(&(7, 4)));
    }
}
