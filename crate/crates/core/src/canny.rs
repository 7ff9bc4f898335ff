//! Canny edge detection over occupancy rasters.

use serde::{Deserialize, Serialize};

use crate::raster::Raster2D;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    /// Hysteresis low threshold on the Sobel gradient magnitude (0–255 input).
    pub low: f64,
    /// Hysteresis high threshold.
    pub high: f64,
    /// Pre-blur standard deviation in cells.
    pub blur_sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { low: 50.0, high: 150.0, blur_sigma: 1.0 }
    }
}

/// Edge bitmap of `raster` (values expected on a 0–255 scale).
pub fn canny_edges(raster: &Raster2D, params: &CannyParams) -> Vec<bool> {
    let (w, h) = (raster.width, raster.height);
    if w < 3 || h < 3 {
        return vec![false; w * h];
    }
    let mut blurred = raster.clone();
    blurred.gaussian_blur(params.blur_sigma);

    // Sobel gradients.
    let mut mag = vec![0.0f64; w * h];
    let mut grad = vec![(0.0f64, 0.0f64); w * h];
    let at = |x: i64, y: i64| -> f64 {
        let cx = x.clamp(0, w as i64 - 1) as usize;
        let cy = y.clamp(0, h as i64 - 1) as usize;
        blurred.values[cy * w + cx]
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = -at(x - 1, y - 1) - 2.0 * at(x - 1, y) - at(x - 1, y + 1)
                + at(x + 1, y - 1)
                + 2.0 * at(x + 1, y)
                + at(x + 1, y + 1);
            let gy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            grad[i] = (gx, gy);
        }
    }

    // Non-maximum suppression with bilinear interpolation along the exact
    // gradient direction (sector quantization fragments diagonal ridges).
    let sample = |x: f64, y: f64| -> f64 {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let m00 = mag[y0 * w + x0];
        let m10 = mag[y0 * w + x1];
        let m01 = mag[y1 * w + x0];
        let m11 = mag[y1 * w + x1];
        m00 * (1.0 - fx) * (1.0 - fy) + m10 * fx * (1.0 - fy) + m01 * (1.0 - fx) * fy + m11 * fx * fy
    };
    let mut thin = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            if mag[i] <= 0.0 {
                continue;
            }
            let (gx, gy) = grad[i];
            let inv = 1.0 / mag[i];
            let (ux, uy) = (gx * inv, gy * inv);
            let ahead = sample(x as f64 + ux, y as f64 + uy);
            let behind = sample(x as f64 - ux, y as f64 - uy);
            if mag[i] >= ahead && mag[i] >= behind {
                thin[i] = mag[i];
            }
        }
    }

    // Double threshold + hysteresis from strong pixels.
    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..w * h {
        if thin[i] >= params.high {
            edges[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let x = (i % w) as i64;
        let y = (i / w) as i64;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] >= params.low {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edges
}
