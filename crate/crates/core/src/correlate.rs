//! 2D cross-correlation of a base grid with an anchored kernel.
//!
//! `score(c) = Σ_k base[c + k − anchor] · kernel[k]` with zero padding, i.e.
//! template matching semantics: the kernel is not flipped. Small kernels run
//! the direct sum; larger ones go through zero-padded FFTs, which must agree
//! with the direct path to 1e-4 relative.

use std::collections::HashMap;
use std::sync::Mutex;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::raster::Raster2D;

/// Kernels with at most this many cells use the direct sum.
const DIRECT_AREA_LIMIT: usize = 64 * 64;

pub fn cross_correlate(base: &Raster2D, kernel: &Raster2D, anchor: (usize, usize)) -> Raster2D {
    Correlator::new(base.clone()).correlate(kernel, anchor)
}

/// Reusable correlation engine that caches the base grid's spectra across
/// kernels (one localization evaluates dozens of kernels on one plan).
pub struct Correlator {
    base: Raster2D,
    spectra: Mutex<HashMap<(usize, usize), std::sync::Arc<Vec<Complex<f64>>>>>,
}

impl Correlator {
    pub fn new(base: Raster2D) -> Self {
        Self { base, spectra: Mutex::new(HashMap::new()) }
    }

    pub fn base(&self) -> &Raster2D {
        &self.base
    }

    pub fn correlate(&self, kernel: &Raster2D, anchor: (usize, usize)) -> Raster2D {
        if kernel.width * kernel.height <= DIRECT_AREA_LIMIT {
            self.correlate_direct(kernel, anchor)
        } else {
            self.correlate_fft(kernel, anchor)
        }
    }

    pub fn correlate_direct(&self, kernel: &Raster2D, anchor: (usize, usize)) -> Raster2D {
        let base = &self.base;
        let (bw, bh) = (base.width as i64, base.height as i64);
        let mut out = base.clone();
        for oy in 0..bh {
            for ox in 0..bw {
                let mut acc = 0.0f64;
                for ky in 0..kernel.height as i64 {
                    let by = oy + ky - anchor.1 as i64;
                    if by < 0 || by >= bh {
                        continue;
                    }
                    for kx in 0..kernel.width as i64 {
                        let bx = ox + kx - anchor.0 as i64;
                        if bx < 0 || bx >= bw {
                            continue;
                        }
                        let k = kernel.values[ky as usize * kernel.width + kx as usize];
                        if k != 0.0 {
                            acc += k * base.values[by as usize * bw as usize + bx as usize];
                        }
                    }
                }
                out.values[(oy * bw + ox) as usize] = acc;
            }
        }
        out
    }

    pub fn correlate_fft(&self, kernel: &Raster2D, anchor: (usize, usize)) -> Raster2D {
        let base = &self.base;
        let pw = next_fast_len(base.width + kernel.width);
        let ph = next_fast_len(base.height + kernel.height);
        let mut planner = FftPlanner::<f64>::new();

        let base_spec = {
            let mut cache = self.spectra.lock().expect("spectra lock");
            cache
                .entry((pw, ph))
                .or_insert_with(|| {
                    let mut grid = vec![Complex::default(); pw * ph];
                    for y in 0..base.height {
                        for x in 0..base.width {
                            grid[y * pw + x].re = base.values[y * base.width + x];
                        }
                    }
                    fft_2d(&mut grid, pw, ph, &mut planner, false);
                    std::sync::Arc::new(grid)
                })
                .clone()
        };

        // Kernel embedded with its anchor at index (0, 0), wrapping negative
        // offsets to the far edge of the padded grid.
        let mut ker = vec![Complex::default(); pw * ph];
        for ky in 0..kernel.height {
            for kx in 0..kernel.width {
                let v = kernel.values[ky * kernel.width + kx];
                if v != 0.0 {
                    let px = (kx + pw - anchor.0) % pw;
                    let py = (ky + ph - anchor.1) % ph;
                    ker[py * pw + px].re = v;
                }
            }
        }
        fft_2d(&mut ker, pw, ph, &mut planner, false);

        for (k, b) in ker.iter_mut().zip(base_spec.iter()) {
            *k = *b * k.conj();
        }
        fft_2d(&mut ker, pw, ph, &mut planner, true);

        let scale = 1.0 / (pw * ph) as f64;
        let mut out = base.clone();
        for y in 0..base.height {
            for x in 0..base.width {
                out.values[y * base.width + x] = ker[y * pw + x].re * scale;
            }
        }
        out
    }
}

fn fft_2d(data: &mut [Complex<f64>], width: usize, height: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let row_fft = if inverse { planner.plan_fft_inverse(width) } else { planner.plan_fft_forward(width) };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(height) } else { planner.plan_fft_forward(height) };
    let mut column = vec![Complex::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Smallest n >= target whose prime factors are all in {2, 3, 5}.
fn next_fast_len(target: usize) -> usize {
    let mut n = target.max(1);
    loop {
        let mut m = n;
        for p in [2usize, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn pseudo_raster(w: usize, h: usize, seed: u64) -> Raster2D {
        let mut r = Raster2D::zeros(w, h, 1.0, Vector2::zeros()).unwrap();
        let mut state = seed | 1;
        for v in r.values.iter_mut() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            *v = ((state >> 40) as f64 / (1u32 << 24) as f64) - 0.5;
        }
        r
    }

    #[test]
    fn impulse_kernel_is_identity() {
        let base = pseudo_raster(17, 11, 5);
        let mut kernel = Raster2D::zeros(1, 1, 1.0, Vector2::zeros()).unwrap();
        kernel.set(0, 0, 1.0);
        let c = Correlator::new(base.clone());
        let out = c.correlate(&kernel, (0, 0));
        for (a, b) in out.values.iter().zip(&base.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn anchor_shifts_response() {
        // kernel = impulse at (2, 1) with anchor (2, 1) is also identity.
        let base = pseudo_raster(9, 9, 7);
        let mut kernel = Raster2D::zeros(5, 3, 1.0, Vector2::zeros()).unwrap();
        kernel.set(2, 1, 1.0);
        let out = Correlator::new(base.clone()).correlate(&kernel, (2, 1));
        for (a, b) in out.values.iter().zip(&base.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn fft_matches_direct() {
        for seed in 0..6u64 {
            let base = pseudo_raster(40 + seed as usize * 7, 33 + seed as usize * 5, seed * 13 + 1);
            let kernel = pseudo_raster(9 + seed as usize * 12, 70 + seed as usize * 3, seed * 29 + 2);
            let anchor = ((kernel.width / 3).min(kernel.width - 1), (kernel.height / 2).min(kernel.height - 1));
            let c = Correlator::new(base);
            let direct = c.correlate_direct(&kernel, anchor);
            let fft = c.correlate_fft(&kernel, anchor);
            let scale = direct.values.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-12);
            for (a, b) in fft.values.iter().zip(&direct.values) {
                assert!(
                    (a - b).abs() / scale < 1e-4,
                    "seed {seed}: fft {a} vs direct {b} (scale {scale})"
                );
            }
        }
    }

    #[test]
    fn kernel_larger_than_base_works() {
        let base = pseudo_raster(12, 10, 3);
        let kernel = pseudo_raster(30, 28, 4);
        let c = Correlator::new(base);
        let direct = c.correlate_direct(&kernel, (15, 14));
        let fft = c.correlate_fft(&kernel, (15, 14));
        let scale = direct.values.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        for (a, b) in fft.values.iter().zip(&direct.values) {
            assert!((a - b).abs() / scale < 1e-4);
        }
    }

    #[test]
    fn next_fast_len_is_smooth() {
        for t in [1usize, 7, 97, 255, 511, 1000] {
            let n = next_fast_len(t);
            assert!(n >= t);
            let mut m = n;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            assert_eq!(m, 1);
        }
    }
}
