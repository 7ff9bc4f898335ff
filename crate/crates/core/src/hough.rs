//! Progressive probabilistic Hough transform for line segments.
//!
//! Edge pixels vote incrementally in random order; once a pixel's best bin
//! clears the vote threshold, the supporting run is walked along the line,
//! consumed pixels are unvoted, and the run becomes a segment if long
//! enough. Consumption erases a corridor around the line so that the twin
//! ridge Canny leaves on the far side of a thin wall joins the same segment
//! instead of spawning a duplicate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    /// Accumulator distance resolution in cells.
    pub rho_resolution: f64,
    /// Accumulator angle resolution in radians.
    pub theta_resolution: f64,
    /// Votes needed before a line is extracted.
    pub vote_threshold: u32,
    /// Minimum accepted segment length in cells.
    pub min_length: f64,
    /// Largest run gap bridged while walking a line, in cells.
    pub max_gap: f64,
    /// Perpendicular half-width of the consumed corridor, in cells.
    pub erase_halfwidth: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            rho_resolution: 1.0,
            theta_resolution: 1f64.to_radians(),
            vote_threshold: 10,
            min_length: 6.0,
            max_gap: 3.0,
            erase_halfwidth: 2.0,
        }
    }
}

/// Line segment in fractional cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSegment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

pub fn probabilistic_hough(
    edges: &[bool],
    width: usize,
    height: usize,
    params: &HoughParams,
    seed: u64,
) -> Vec<CellSegment> {
    assert_eq!(edges.len(), width * height);
    let n_theta = (std::f64::consts::PI / params.theta_resolution).round() as usize;
    let r_max = ((width * width + height * height) as f64).sqrt();
    let n_rho = (2.0 * r_max / params.rho_resolution).ceil() as usize + 1;
    let trig: Vec<(f64, f64)> =
        (0..n_theta).map(|t| (t as f64 * params.theta_resolution).sin_cos()).collect();
    let rho_index = |x: f64, y: f64, t: usize| -> usize {
        let (s, c) = trig[t];
        (((x * c + y * s) + r_max) / params.rho_resolution).round() as usize
    };

    let mut points: Vec<(usize, usize)> = (0..edges.len())
        .filter(|&i| edges[i])
        .map(|i| (i % width, i / width))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points.shuffle(&mut rng);

    let mut live = edges.to_vec();
    let mut voted = vec![false; edges.len()];
    let mut acc = vec![0i32; n_theta * n_rho];
    let mut segments = Vec::new();

    for &(px, py) in &points {
        let idx = py * width + px;
        if !live[idx] {
            continue;
        }
        // Cast this point's votes, remembering its strongest bin.
        voted[idx] = true;
        let mut best = (0i32, 0usize);
        for t in 0..n_theta {
            let bin = t * n_rho + rho_index(px as f64, py as f64, t);
            acc[bin] += 1;
            if acc[bin] > best.0 {
                best = (acc[bin], t);
            }
        }
        if best.0 < params.vote_threshold as i32 {
            continue;
        }

        // Walk the supporting run through (px, py) along the line direction,
        // collecting the pixels it is made of.
        let theta = best.1 as f64 * params.theta_resolution;
        let dir = (-theta.sin(), theta.cos());
        let mut ends = [(px as f64, py as f64); 2];
        let mut run: Vec<(f64, f64)> = vec![(px as f64, py as f64)];
        for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let mut gap = 0.0;
            let mut step = 1.0;
            loop {
                let x = px as f64 + sign * step * dir.0;
                let y = py as f64 + sign * step * dir.1;
                match corridor_hit(&live, width, height, x, y, dir) {
                    Some(hit) => {
                        ends[side] = hit;
                        run.push(hit);
                        gap = 0.0;
                    }
                    None => {
                        gap += 1.0;
                        if gap > params.max_gap {
                            break;
                        }
                    }
                }
                step += 1.0;
                if x < -1.0 || y < -1.0 || x > width as f64 || y > height as f64 {
                    break;
                }
            }
        }

        // The accumulator bin only coarsely estimates the direction; re-fit
        // the collected pixels and project the extremes onto the fit.
        let _ = ends;
        let (a, b) = fit_run(&run);
        let len = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        if len >= params.min_length {
            segments.push(CellSegment { a, b });
        }
        // Consume the corridor around the fitted line either way (with a
        // little overhang) and retract its votes.
        let over = params.erase_halfwidth / len.max(1.0);
        let ext_a = (a.0 - (b.0 - a.0) * over, a.1 - (b.1 - a.1) * over);
        let ext_b = (b.0 + (b.0 - a.0) * over, b.1 + (b.1 - a.1) * over);
        erase_corridor(&mut live, &mut voted, &mut acc, width, height, ext_a, ext_b, params, &rho_index);
    }
    segments
}

/// Principal-direction fit of a pixel run; returns the extreme projections.
fn fit_run(run: &[(f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let n = run.len() as f64;
    let cx = run.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = run.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in run {
        let dx = p.0 - cx;
        let dy = p.1 - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Dominant eigenvector of the 2x2 scatter matrix.
    let trace = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let lam = 0.5 * trace + (0.25 * trace * trace - det).max(0.0).sqrt();
    let (dx, dy) = if sxy.abs() > 1e-12 {
        (lam - syy, sxy)
    } else if sxx >= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let norm = (dx * dx + dy * dy).sqrt().max(1e-12);
    let (ux, uy) = (dx / norm, dy / norm);
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for p in run {
        let t = (p.0 - cx) * ux + (p.1 - cy) * uy;
        t_min = t_min.min(t);
        t_max = t_max.max(t);
    }
    ((cx + t_min * ux, cy + t_min * uy), (cx + t_max * ux, cy + t_max * uy))
}

/// Looks for a live pixel at (x, y) or its immediate perpendicular
/// neighbors; returns the pixel found.
fn corridor_hit(
    live: &[bool],
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    dir: (f64, f64),
) -> Option<(f64, f64)> {
    let perp = (-dir.1, dir.0);
    for off in [0.0, 1.0, -1.0] {
        let cx = (x + off * perp.0).round() as i64;
        let cy = (y + off * perp.1).round() as i64;
        if cx >= 0 && cy >= 0 && (cx as usize) < width && (cy as usize) < height {
            if live[cy as usize * width + cx as usize] {
                return Some((cx as f64, cy as f64));
            }
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn erase_corridor(
    live: &mut [bool],
    voted: &mut [bool],
    acc: &mut [i32],
    width: usize,
    height: usize,
    a: (f64, f64),
    b: (f64, f64),
    params: &HoughParams,
    rho_index: &dyn Fn(f64, f64, usize) -> usize,
) {
    let n_theta = (std::f64::consts::PI / params.theta_resolution).round() as usize;
    let n_rho = acc.len() / n_theta;
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let len = (dx * dx + dy * dy).sqrt().max(1.0);
    let steps = (len * 2.0).ceil() as usize;
    let half = params.erase_halfwidth.ceil() as i64;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let cx = a.0 + t * dx;
        let cy = a.1 + t * dy;
        for oy in -half..=half {
            for ox in -half..=half {
                let x = (cx + ox as f64).round() as i64;
                let y = (cy + oy as f64).round() as i64;
                if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                    continue;
                }
                // Keep the erase footprint round-ish, with half-cell slack so
                // fractional line positions still cover the nominal radius.
                let ddx = x as f64 - cx;
                let ddy = y as f64 - cy;
                let r_eff = params.erase_halfwidth + 0.5;
                if ddx * ddx + ddy * ddy > r_eff * r_eff {
                    continue;
                }
                let i = y as usize * width + x as usize;
                if live[i] {
                    live[i] = false;
                    if voted[i] {
                        for th in 0..n_theta {
                            let bin = th * n_rho + rho_index(x as f64, y as f64, th);
                            acc[bin] -= 1;
                        }
                    }
                }
            }
        }
    }
}
