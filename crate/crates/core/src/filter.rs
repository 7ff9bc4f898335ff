//! Heatmap-initialized particle filter over odometry steps.
//!
//! Particles sample the normalized heatmap stack, advance through a
//! heading/forward motion model, die when their motion crosses a wall or
//! leaves free space, and systematically resample when the effective sample
//! size collapses. Per-particle noise comes from a counter-based generator
//! keyed by (seed, step, particle), so runs are reproducible regardless of
//! thread count.

use nalgebra::Vector2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::FloorPlan;
use crate::matching::{normalize_to_pdf, HeatmapStack, PoseEstimate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Rescales weights to sum to 1; returns false when all weights vanish.
    pub fn normalize(&mut self) -> bool {
        let sum = self.weight_sum();
        if sum <= 0.0 {
            return false;
        }
        for p in self.particles.iter_mut() {
            p.weight /= sum;
        }
        true
    }

    /// Effective sample size 1/Σw² of normalized weights.
    pub fn ess(&self) -> f64 {
        let sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        if sq <= 0.0 {
            0.0
        } else {
            1.0 / sq
        }
    }

    pub fn positions(&self) -> Vec<Vector2<f64>> {
        self.particles.iter().map(|p| Vector2::new(p.x, p.y)).collect()
    }
}

/// One odometry increment: rotate by `heading`, then move `forward` meters
/// along the new heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryStep {
    pub forward: f64,
    pub heading: f64,
}

/// Sanity gate on per-step displacement (meters).
pub const MAX_STEP_FORWARD: f64 = 5.0;

impl OdometryStep {
    pub fn new(forward: f64, heading: f64) -> Result<Self> {
        if !forward.is_finite() || forward.abs() >= MAX_STEP_FORWARD {
            return Err(Error::invalid(format!(
                "odometry step of {forward} m fails the |forward| < {MAX_STEP_FORWARD} m sanity gate"
            )));
        }
        if !heading.is_finite() {
            return Err(Error::invalid("odometry heading must be finite".to_string()));
        }
        Ok(Self { forward, heading })
    }
}

/// Splits steps longer than `target` meters into equal sub-steps; the
/// heading change rides on the first piece.
pub fn resample_odometry(steps: &[OdometryStep], target: f64) -> Vec<OdometryStep> {
    let mut out = Vec::with_capacity(steps.len());
    for s in steps {
        let pieces = (s.forward.abs() / target).ceil().max(1.0) as usize;
        let forward = s.forward / pieces as f64;
        out.push(OdometryStep { forward, heading: s.heading });
        for _ in 1..pieces {
            out.push(OdometryStep { forward, heading: 0.0 });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionNoise {
    /// Std of the forward error as a fraction of the step length.
    pub sigma_forward_frac: f64,
    /// Std of the heading error (radians).
    pub sigma_heading: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self { sigma_forward_frac: 0.1, sigma_heading: 2f64.to_radians() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    /// RMSE of the position error over the final 10 steps (meters).
    pub rmse_last10: f64,
    /// Position error at the last step (meters).
    pub final_error: f64,
}

// Counter-based noise: splitmix64 over a (seed, step, particle, draw) key.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn counter_uniform(seed: u64, step: u64, particle: u64, draw: u64) -> f64 {
    let k = splitmix64(seed ^ splitmix64(step ^ splitmix64(particle ^ splitmix64(draw))));
    ((k >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn counter_normal_pair(seed: u64, step: u64, particle: u64) -> (f64, f64) {
    let u1 = counter_uniform(seed, step, particle, 0);
    let u2 = counter_uniform(seed, step, particle, 1);
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = std::f64::consts::TAU * u2;
    (r * phi.cos(), r * phi.sin())
}

/// Draws `n` particles i.i.d. from a normalized heatmap stack, with uniform
/// jitter inside each cell and ±half the minimal orientation gap.
///
/// A degenerate (zero-mass) stack falls back to uniform sampling over
/// traversable cells.
pub fn init_from_heatmap(stack: &HeatmapStack, n: usize, seed: u64) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::invalid("particle count must be >= 1".to_string()));
    }
    if stack.maps.is_empty() {
        return Err(Error::invalid("empty heatmap stack".to_string()));
    }
    let cells = stack.width() * stack.height();
    let mut cdf = Vec::with_capacity(stack.maps.len() * cells);
    let mut acc = 0.0f64;
    for map in &stack.maps {
        for &v in &map.values {
            acc += v.max(0.0);
            cdf.push(acc);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = stack.resolution();
    let theta_jitter = half_min_gap(&stack.thetas);
    let mut particles = Vec::with_capacity(n);

    if acc <= 0.0 {
        // Degenerate stack: uniform over traversable cells.
        let free: Vec<usize> = (0..cells).filter(|&i| stack.traversable[i]).collect();
        if free.is_empty() {
            return Err(Error::invalid("stack has no traversable cells to fall back to".to_string()));
        }
        for _ in 0..n {
            let cell = free[rng.random_range(0..free.len())];
            let mi = rng.random_range(0..stack.thetas.len());
            particles.push(particle_in_cell(stack, mi, cell, res, theta_jitter, &mut rng, n));
        }
        return Ok(ParticleSet { particles });
    }

    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let (mi, cell) = (idx / cells, idx % cells);
        particles.push(particle_in_cell(stack, mi, cell, res, theta_jitter, &mut rng, n));
    }
    Ok(ParticleSet { particles })
}

fn particle_in_cell(
    stack: &HeatmapStack,
    map_index: usize,
    cell: usize,
    res: f64,
    theta_jitter: f64,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Particle {
    let (ix, iy) = (cell % stack.width(), cell / stack.width());
    let center = stack.maps[map_index].cell_center(ix, iy);
    let jx: f64 = rng.random_range(-0.5..0.5) * res;
    let jy: f64 = rng.random_range(-0.5..0.5) * res;
    let jt: f64 = rng.random_range(-1.0..1.0) * theta_jitter;
    Particle {
        x: center.x + jx,
        y: center.y + jy,
        theta: (stack.thetas[map_index] + jt).rem_euclid(std::f64::consts::TAU),
        weight: 1.0 / n as f64,
    }
}

/// Half the smallest circular gap between candidate orientations. A single
/// orientation carries no expressible spread, so its jitter is zero.
fn half_min_gap(thetas: &[f64]) -> f64 {
    if thetas.len() < 2 {
        return 0.0;
    }
    let tau = std::f64::consts::TAU;
    let mut sorted: Vec<f64> = thetas.iter().map(|t| t.rem_euclid(tau)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut min_gap = tau - (sorted[sorted.len() - 1] - sorted[0]);
    for w in sorted.windows(2) {
        min_gap = min_gap.min(w[1] - w[0]);
    }
    min_gap.max(1e-6) / 2.0
}

/// Advances every particle through one odometry step with multiplicative
/// forward noise and additive heading noise; weights are untouched.
pub fn predict(
    set: &ParticleSet,
    step: &OdometryStep,
    noise: &MotionNoise,
    seed: u64,
    step_index: u64,
) -> ParticleSet {
    let particles: Vec<Particle> = set
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (nf, nh) = counter_normal_pair(seed, step_index, i as u64);
            let theta = p.theta + step.heading + nh * noise.sigma_heading;
            let forward = step.forward * (1.0 + nf * noise.sigma_forward_frac);
            Particle {
                x: p.x + forward * theta.cos(),
                y: p.y + forward * theta.sin(),
                theta: theta.rem_euclid(std::f64::consts::TAU),
                weight: p.weight,
            }
        })
        .collect();
    ParticleSet { particles }
}

/// Zeroes the weight of every particle whose motion from its previous
/// position crosses a wall cell or ends outside traversable space, then
/// renormalizes.
///
/// When every particle dies, the returned set is re-seeded from the
/// previous set with tripled noise (the recovery rule) and the flag is
/// `true`; a second consecutive total kill is the caller's cue to
/// reinitialize from the original heatmap.
pub fn apply_constraints(
    predicted: &ParticleSet,
    plan: &FloorPlan,
    previous: &ParticleSet,
    step: &OdometryStep,
    noise: &MotionNoise,
    seed: u64,
    step_index: u64,
) -> (ParticleSet, bool) {
    assert_eq!(predicted.len(), previous.len(), "particle sets out of step");
    let mut out = predicted.clone();
    out.particles.par_iter_mut().zip(previous.particles.par_iter()).for_each(|(p, prev)| {
        let from = Vector2::new(prev.x, prev.y);
        let to = Vector2::new(p.x, p.y);
        if !plan.move_is_free(&from, &to) {
            p.weight = 0.0;
        }
    });
    if out.normalize() {
        return (out, false);
    }

    // Total kill: re-seed from the previous set with tripled noise and keep
    // whatever lands in free space.
    let inflated = MotionNoise {
        sigma_forward_frac: noise.sigma_forward_frac * 3.0,
        sigma_heading: noise.sigma_heading * 3.0,
    };
    let mut recovered = predict(previous, step, &inflated, seed ^ 0x5eed_5a17, step_index);
    let n = recovered.len() as f64;
    for p in recovered.particles.iter_mut() {
        p.weight = if plan.is_traversable(&Vector2::new(p.x, p.y)) { 1.0 } else { 0.0 };
    }
    if !recovered.normalize() {
        for p in recovered.particles.iter_mut() {
            p.weight = 1.0 / n;
        }
    }
    (recovered, true)
}

/// Systematic resampling when `ESS < threshold · n`; weights equalize.
pub fn resample(set: &ParticleSet, threshold: f64, seed: u64) -> ParticleSet {
    let n = set.len();
    if n == 0 || set.ess() >= threshold * n as f64 {
        return set.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut particles = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut k = 0usize;
    for p in &set.particles {
        cum += p.weight;
        while k < n && (u0 + k as f64 / n as f64) <= cum {
            particles.push(Particle { weight: 1.0 / n as f64, ..*p });
            k += 1;
        }
    }
    while particles.len() < n {
        let last = *set.particles.last().expect("non-empty set");
        particles.push(Particle { weight: 1.0 / n as f64, ..last });
    }
    ParticleSet { particles }
}

/// Weighted mean position, circular mean heading; score is ESS/n.
pub fn estimate(set: &ParticleSet) -> Result<PoseEstimate> {
    if set.is_empty() {
        return Err(Error::invalid("cannot estimate from an empty particle set".to_string()));
    }
    let w_sum = set.weight_sum();
    if w_sum <= 0.0 {
        return Err(Error::invalid("particle weights are all zero".to_string()));
    }
    let mut x = 0.0;
    let mut y = 0.0;
    let mut sin = 0.0;
    let mut cos = 0.0;
    for p in &set.particles {
        let w = p.weight / w_sum;
        x += w * p.x;
        y += w * p.y;
        sin += w * p.theta.sin();
        cos += w * p.theta.cos();
    }
    Ok(PoseEstimate::new(x, y, sin.atan2(cos), set.ess() / set.len() as f64))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub particles: usize,
    pub noise: MotionNoise,
    /// Resample when ESS drops below this fraction of n.
    pub ess_threshold: f64,
    /// Long odometry steps are split to roughly this length (meters).
    pub step_length: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { particles: 5000, noise: MotionNoise::default(), ess_threshold: 0.5, step_length: 0.5 }
    }
}

/// Events worth surfacing from a tracking run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RunFlags {
    /// Total-kill recoveries (previous set re-seeded with inflated noise).
    pub recoveries: usize,
    /// Full reinitializations from the prior after consecutive total kills.
    pub reinits: usize,
}

/// Runs the full predict / constrain / resample loop over `steps`.
///
/// `ground_truth`, when given, must hold one pose per step (the pose after
/// that step); metrics compare estimated positions against it.
pub fn run_trajectory(
    stack: &HeatmapStack,
    steps: &[OdometryStep],
    plan: &FloorPlan,
    params: &FilterParams,
    seed: u64,
    ground_truth: Option<&[PoseEstimate]>,
) -> Result<(Vec<PoseEstimate>, Option<TrajectoryMetrics>, RunFlags)> {
    if steps.is_empty() {
        return Err(Error::invalid("trajectory needs at least one odometry step".to_string()));
    }
    if let Some(truth) = ground_truth {
        if truth.len() != steps.len() {
            return Err(Error::invalid(format!(
                "ground truth has {} poses for {} steps",
                truth.len(),
                steps.len()
            )));
        }
    }
    let pdf = normalize_to_pdf(stack);
    let mut particles = init_from_heatmap(&pdf, params.particles, seed)?;
    let mut estimates = Vec::with_capacity(steps.len());
    let mut flags = RunFlags::default();
    let mut consecutive_kills = 0usize;

    for (i, step) in steps.iter().enumerate() {
        let predicted = predict(&particles, step, &params.noise, seed, i as u64);
        let (constrained, killed) =
            apply_constraints(&predicted, plan, &particles, step, &params.noise, seed, i as u64);
        particles = constrained;
        if killed {
            consecutive_kills += 1;
            flags.recoveries += 1;
            if consecutive_kills >= 2 {
                particles = init_from_heatmap(&pdf, params.particles, seed ^ (0x5eed_0000 + i as u64))?;
                flags.reinits += 1;
                consecutive_kills = 0;
            }
        } else {
            consecutive_kills = 0;
        }
        particles = resample(&particles, params.ess_threshold, seed.wrapping_add(i as u64 * 0x9e37));
        estimates.push(estimate(&particles)?);
    }

    let metrics = ground_truth.map(|truth| {
        let errors: Vec<f64> = estimates
            .iter()
            .zip(truth)
            .map(|(e, t)| (e.position() - t.position()).norm())
            .collect();
        let take = errors.len().min(10);
        let last10 = &errors[errors.len() - take..];
        let rmse = (last10.iter().map(|e| e * e).sum::<f64>() / take as f64).sqrt();
        TrajectoryMetrics { rmse_last10: rmse, final_error: *errors.last().expect("non-empty") }
    });
    Ok((estimates, metrics, flags))
}
