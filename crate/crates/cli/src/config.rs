//! Pipeline parameters: TOML file plus `key=value` overrides, echoed as JSON
//! next to every output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use warpmatch::descriptors::GradientHistogram;
use warpmatch::matcher::MatchParams;
use warpmatch::reconstruct::FactorizeOptions;
use warpmatch::tps::{GridFitOptions, StepSize};

use crate::error::CliError;

/// Where dense keypoints come from when matching manifest images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointSource {
    /// Foreground lattice with spacing `stride`.
    Grid,
    /// The manifest's part annotations (visible ones only).
    Parts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub k_grid: usize,
    pub n_points: usize,
    pub m_copies: usize,
    pub stride: u32,
    pub sigma_f: f64,
    pub sigma_w: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub precision: f64,
    pub hop_limit_eval: usize,
    pub hop_limit_reconstruction: usize,
    pub min_pair_matches: usize,
    pub path_cost_max: f64,
    pub min_image_matches: usize,
    pub visibility_frac: f64,
    pub percentiles: [f64; 2],
    pub pose_k: usize,
    pub grid_iterations: usize,
    pub grid_bending_weight: f64,
    pub grid_bound: f64,
    pub chromatic: bool,
    pub min_second_nn_px: f64,
    pub max_bary_dist: f64,
    pub energy_percentile: f64,
    pub descriptor_radius: u32,
    pub keypoints: KeypointSource,
    /// Fraction of the appearance-only ranking used to fit a warp prior.
    pub seed_fraction: f64,
    /// Synthetic pairs per image used to calibrate the precision cutoff.
    pub calibration_pairs: usize,
    /// Fixed ratio cutoff; calibrated on synthetic pairs when absent.
    pub ratio_cutoff: Option<f64>,
    pub factorize_max_iters: usize,
    pub factorize_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k_grid: 10,
            n_points: 100,
            m_copies: 9,
            stride: 8,
            sigma_f: 1.75,
            sigma_w: 18.0,
            lambda: 0.3,
            alpha: 0.05,
            precision: 0.85,
            hop_limit_eval: 3,
            hop_limit_reconstruction: 4,
            min_pair_matches: 50,
            path_cost_max: 0.4,
            min_image_matches: 30,
            visibility_frac: 0.10,
            percentiles: [50.0, 90.0],
            pose_k: 5,
            grid_iterations: 2000,
            grid_bending_weight: 0.0,
            grid_bound: 1.5,
            chromatic: true,
            min_second_nn_px: 10.0,
            max_bary_dist: 0.1,
            energy_percentile: 90.0,
            descriptor_radius: 8,
            keypoints: KeypointSource::Grid,
            seed_fraction: 0.3,
            calibration_pairs: 2,
            ratio_cutoff: None,
            factorize_max_iters: 3000,
            factorize_tol: 1e-10,
        }
    }
}

impl PipelineConfig {
    /// Reads an optional TOML file, applies `key=value` overrides (values
    /// parsed as TOML, falling back to strings) and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
            let value = value.trim();
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.trim().to_string(), parsed);
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                bad.push(what.to_string());
            }
        };
        check(self.k_grid >= 2, "k_grid >= 2");
        check(self.n_points >= 1, "n_points >= 1");
        check(self.stride >= 1, "stride >= 1");
        check(
            self.sigma_f > 0.0 && self.sigma_w > 0.0,
            "sigma_f, sigma_w > 0",
        );
        check(self.lambda >= 0.0, "lambda >= 0");
        check(self.alpha > 0.0 && self.alpha <= 1.0, "alpha in (0, 1]");
        check((0.0..=1.0).contains(&self.precision), "precision in [0, 1]");
        check(self.path_cost_max >= 0.0, "path_cost_max >= 0");
        check(
            (0.0..=1.0).contains(&self.visibility_frac),
            "visibility_frac in [0, 1]",
        );
        let [lo, hi] = self.percentiles;
        check(
            (0.0..=100.0).contains(&lo) && (0.0..=100.0).contains(&hi) && lo <= hi,
            "0 <= percentiles[0] <= percentiles[1] <= 100",
        );
        check(self.pose_k >= 1, "pose_k >= 1");
        check(self.grid_bending_weight >= 0.0, "grid_bending_weight >= 0");
        check(self.grid_bound > 0.0, "grid_bound > 0");
        check(self.min_second_nn_px >= 0.0, "min_second_nn_px >= 0");
        check(self.max_bary_dist > 0.0, "max_bary_dist > 0");
        check(
            (0.0..=100.0).contains(&self.energy_percentile),
            "energy_percentile in [0, 100]",
        );
        check(self.descriptor_radius >= 2, "descriptor_radius >= 2");
        check(
            self.seed_fraction > 0.0 && self.seed_fraction <= 1.0,
            "seed_fraction in (0, 1]",
        );
        check(
            self.ratio_cutoff.is_none_or(|r| r >= 0.0),
            "ratio_cutoff >= 0",
        );
        check(self.factorize_tol >= 0.0, "factorize_tol >= 0");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "config out of range: {}",
                bad.join(", ")
            )))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            sigma_f: self.sigma_f,
            sigma_w: self.sigma_w,
            lambda: self.lambda,
            min_second_nn_px: self.min_second_nn_px,
            precision_threshold: self.precision,
        }
    }

    pub fn grid_fit(&self) -> GridFitOptions {
        GridFitOptions {
            k: self.k_grid,
            iterations: self.grid_iterations,
            step: StepSize::Auto,
            bending_weight: self.grid_bending_weight,
            bound: self.grid_bound,
        }
    }

    pub fn extractor(&self) -> GradientHistogram {
        GradientHistogram {
            radius: self.descriptor_radius,
            ..GradientHistogram::default()
        }
    }

    pub fn factorize(&self) -> FactorizeOptions {
        FactorizeOptions {
            max_iters: self.factorize_max_iters,
            tol: self.factorize_tol,
        }
    }
}
