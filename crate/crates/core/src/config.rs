//! Run configuration: every tunable of the pipeline with its default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterParams;
use crate::scale::{AlignParams, AlignmentMode, RansacParams};
use crate::segments::ExtractParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Pixel subsampling step for unprojection.
    pub unproject_stride: usize,
    /// Honor per-frame depth masks.
    pub use_masks: bool,
    pub alignment_mode: AlignmentMode,
    pub align: AlignParams,
    pub ransac: RansacParams,
    /// Half-width of the horizontal slice around the camera height (meters).
    pub band_half_width: f64,
    /// Points farther than this from the scan origin are dropped (meters).
    pub max_observation_radius: f64,
    /// Observation raster resolution (meters per cell).
    pub obs_resolution: f64,
    pub extract: ExtractParams,
    /// Floor-plan raster resolution (meters per cell).
    pub plan_resolution: f64,
    /// Weight of the certainly-empty-space penalty.
    pub alpha: f64,
    /// Gaussian smoothing of the recorded-wall kernel (meters).
    pub kernel_sigma: f64,
    /// Corrective scale factors marginalized during matching.
    pub scales: Vec<f64>,
    /// Orientation candidates for stationary localization.
    pub orientations: usize,
    /// Orientation candidates when the stack feeds the particle filter.
    pub orientations_sequential: usize,
    /// Orientation histogram bin width (degrees).
    pub hist_bin_deg: f64,
    pub filter: FilterParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            unproject_stride: 4,
            use_masks: true,
            alignment_mode: AlignmentMode::Full,
            align: AlignParams::default(),
            ransac: RansacParams::default(),
            band_half_width: 0.1,
            max_observation_radius: 25.0,
            obs_resolution: 0.05,
            extract: ExtractParams::default(),
            plan_resolution: 0.1,
            alpha: 10.0,
            kernel_sigma: 0.15,
            scales: vec![0.9, 1.0, 1.1],
            orientations: 10,
            orientations_sequential: 4,
            hist_bin_deg: 1.0,
            filter: FilterParams::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, why: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("config field `{field}` {why}")))
            }
        }
        check(self.unproject_stride >= 1, "unproject_stride", "must be >= 1")?;
        check(self.band_half_width > 0.0, "band_half_width", "must be positive")?;
        check(self.max_observation_radius > 0.0, "max_observation_radius", "must be positive")?;
        check(self.obs_resolution > 0.0, "obs_resolution", "must be positive")?;
        check(self.plan_resolution > 0.0, "plan_resolution", "must be positive")?;
        check(self.alpha >= 0.0, "alpha", "must be non-negative")?;
        check(self.kernel_sigma >= 0.0, "kernel_sigma", "must be non-negative")?;
        check(!self.scales.is_empty(), "scales", "must not be empty")?;
        check(self.scales.iter().all(|&s| s > 0.0), "scales", "must all be positive")?;
        check(
            self.orientations >= 2 && self.orientations % 2 == 0,
            "orientations",
            "must be even and >= 2",
        )?;
        check(
            self.orientations_sequential >= 2 && self.orientations_sequential % 2 == 0,
            "orientations_sequential",
            "must be even and >= 2",
        )?;
        let bins = 180.0 / self.hist_bin_deg;
        check(
            self.hist_bin_deg > 0.0 && (bins - bins.round()).abs() < 1e-9,
            "hist_bin_deg",
            "must divide 180",
        )?;
        let (lo, hi) = self.align.bounds;
        check(0.0 < lo && lo < 1.0 && 1.0 < hi, "align.bounds", "must satisfy 0 < lo < 1 < hi")?;
        check(self.align.canonical_height > 0.0, "align.canonical_height", "must be positive")?;
        check(self.align.max_iters >= 1, "align.max_iters", "must be >= 1")?;
        check(self.align.fd_step > 0.0, "align.fd_step", "must be positive")?;
        check(self.ransac.iterations >= 1, "ransac.iterations", "must be >= 1")?;
        check(self.ransac.inlier_threshold > 0.0, "ransac.inlier_threshold", "must be positive")?;
        check(
            self.ransac.min_inlier_fraction > 0.0 && self.ransac.min_inlier_fraction <= 1.0,
            "ransac.min_inlier_fraction",
            "must be in (0, 1]",
        )?;
        check(
            self.ransac.max_tilt > 0.0 && self.ransac.max_tilt < std::f64::consts::FRAC_PI_2,
            "ransac.max_tilt",
            "must be in (0, π/2)",
        )?;
        check(self.extract.hough.vote_threshold >= 1, "extract.hough.vote_threshold", "must be >= 1")?;
        check(self.extract.hough.min_length > 0.0, "extract.hough.min_length", "must be positive")?;
        check(self.extract.hough.max_gap >= 0.0, "extract.hough.max_gap", "must be non-negative")?;
        check(self.extract.canny.low > 0.0, "extract.canny.low", "must be positive")?;
        check(
            self.extract.canny.high >= self.extract.canny.low,
            "extract.canny.high",
            "must be >= extract.canny.low",
        )?;
        check(self.filter.particles >= 1, "filter.particles", "must be >= 1")?;
        check(
            self.filter.ess_threshold > 0.0 && self.filter.ess_threshold <= 1.0,
            "filter.ess_threshold",
            "must be in (0, 1]",
        )?;
        check(self.filter.step_length > 0.0, "filter.step_length", "must be positive")?;
        check(self.filter.noise.sigma_forward_frac >= 0.0, "filter.noise.sigma_forward_frac", "must be non-negative")?;
        check(self.filter.noise.sigma_heading >= 0.0, "filter.noise.sigma_heading", "must be non-negative")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn rejections_name_the_field() {
        let mut cfg = RunConfig::default();
        cfg.alpha = -1.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.orientations = 3;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("orientations"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.align.bounds = (1.5, 4.0);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("align.bounds"), "{err}");
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"alpha": 5.0}"#).unwrap();
        assert_eq!(cfg.alpha, 5.0);
        assert_eq!(cfg.orientations, 10);
        assert_eq!(cfg.scales, vec![0.9, 1.0, 1.1]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"alhpa": 5.0}"#).is_err());
    }
}
