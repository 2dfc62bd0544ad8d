//! Experiment configuration: one strict JSON document per run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value at {path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub system: SystemConfig,
    pub cocycle: CocycleConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub lyapnorm: LyapnormConfig,
    #[serde(default)]
    pub livsic: LivsicConfig,
    #[serde(default)]
    pub holonomy: HolonomyConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Check ids that are supposed to fail (negative controls).
    #[serde(default)]
    pub expect_fail: Vec<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    CatMap,
    Torus { matrix: Vec<Vec<i64>> },
    FullShift { alphabet: u8 },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AngleConfig {
    Sine { c: f64 },
    RootSine { c: f64, nu: f64 },
    Lacunary { c: f64, nu: f64, terms: u32 },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CocycleConfig {
    Identity { dim: usize },
    Constant { matrix: Vec<Vec<f64>> },
    /// The derivative `M` of a toral automorphism, as a constant cocycle.
    Derivative,
    RotationCoboundary { angle: AngleConfig, shear: f64 },
    CylinderCoboundary { depth: u32, spread: f64, seed: u64 },
    LocallyConstant { depth: u32, spread: f64, seed: u64 },
    TorusRotation { frequency: Vec<i64>, phase: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub samples: usize,
    pub iterations: usize,
    /// Bound on `|lambda_1|, |lambda_l|` for coboundaries, and on the error
    /// against closed-form exponents.
    pub tolerance: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            samples: 3,
            iterations: 100_000,
            tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LyapnormConfig {
    /// Defaults to `0.05 alpha eta`.
    pub epsilon: Option<f64>,
    pub truncation: usize,
    pub block_bound: f64,
    pub warmup: usize,
    pub spectrum_iters: usize,
    /// Points in the sandwich and growth suites.
    pub samples: usize,
    pub closed_form_tolerance: f64,
}

impl Default for LyapnormConfig {
    fn default() -> Self {
        LyapnormConfig {
            epsilon: None,
            truncation: 200,
            block_bound: 25.0,
            warmup: 200,
            spectrum_iters: 2000,
            samples: 1000,
            closed_form_tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LivsicConfig {
    /// Largest audited period; defaults to the system's exact limit.
    pub n_max: Option<u32>,
    pub n_points: usize,
    /// Size of the table used for the near-return scan.
    pub scan_points: usize,
    pub beta: f64,
    pub h_min: f64,
    pub max_pairs_per_decade: usize,
    pub obstruction_tolerance: f64,
    pub uniqueness_tolerance: f64,
    pub recursion_tolerance: f64,
    pub zero_exponent_samples: usize,
    pub zero_exponent_iters: usize,
    pub allow_nonzero_exponents: bool,
    pub slope_band: [f64; 2],
    /// Largest accepted ratio between per-decade envelope constants.
    pub envelope_factor: f64,
    /// Shadows must decay at least this fraction of `eta`.
    pub shadow_rate_fraction: f64,
    pub extension_checks: usize,
}

impl Default for LivsicConfig {
    fn default() -> Self {
        LivsicConfig {
            n_max: None,
            n_points: 10_000,
            scan_points: 100_000,
            beta: 1e-2,
            h_min: 1e-4,
            max_pairs_per_decade: 400,
            obstruction_tolerance: 1e-8,
            uniqueness_tolerance: 1e-6,
            recursion_tolerance: 1e-9,
            zero_exponent_samples: 3,
            zero_exponent_iters: 10_000,
            allow_nonzero_exponents: false,
            slope_band: [0.85, 1.15],
            envelope_factor: 10.0,
            shadow_rate_fraction: 0.9,
            extension_checks: 100,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HolonomyConfig {
    /// Domination block length `N`.
    #[serde(rename = "N")]
    pub block: usize,
    pub theta: f64,
    pub k_max: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub pair_budget: usize,
    /// Pair radius for Hölder fits and chains; defaults to half the bracket
    /// radius.
    pub delta: Option<f64>,
    /// Declared exponent of the transfer map; defaults to the cocycle's.
    pub alpha: Option<f64>,
    pub slope_band: Option<[f64; 2]>,
    pub leaf_pairs: usize,
    pub envelope_pairs: usize,
    pub chain_pairs: usize,
    pub max_leaf_offset: f64,
    pub law_tolerance: f64,
    pub exactness_tolerance: f64,
    pub block_fraction: f64,
}

impl Default for HolonomyConfig {
    fn default() -> Self {
        HolonomyConfig {
            block: 10,
            theta: 0.1,
            k_max: 10,
            tol: 1e-10,
            max_iter: 500,
            pair_budget: 2000,
            delta: None,
            alpha: None,
            slope_band: None,
            leaf_pairs: 100,
            envelope_pairs: 1000,
            chain_pairs: 1000,
            max_leaf_offset: 1e-2,
            law_tolerance: 1e-8,
            exactness_tolerance: 1e-12,
            block_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".to_string(),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: format!("{origin}: {}", e.path()),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("spectrum.tolerance", self.spectrum.tolerance),
            ("lyapnorm.block_bound", self.lyapnorm.block_bound),
            ("lyapnorm.closed_form_tolerance", self.lyapnorm.closed_form_tolerance),
            ("livsic.beta", self.livsic.beta),
            ("livsic.h_min", self.livsic.h_min),
            ("livsic.obstruction_tolerance", self.livsic.obstruction_tolerance),
            ("livsic.uniqueness_tolerance", self.livsic.uniqueness_tolerance),
            ("livsic.recursion_tolerance", self.livsic.recursion_tolerance),
            ("livsic.envelope_factor", self.livsic.envelope_factor),
            ("livsic.shadow_rate_fraction", self.livsic.shadow_rate_fraction),
            ("holonomy.theta", self.holonomy.theta),
            ("holonomy.tol", self.holonomy.tol),
            ("holonomy.max_leaf_offset", self.holonomy.max_leaf_offset),
            ("holonomy.law_tolerance", self.holonomy.law_tolerance),
            ("holonomy.exactness_tolerance", self.holonomy.exactness_tolerance),
            ("holonomy.block_fraction", self.holonomy.block_fraction),
        ];
        for (path, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(path, "must be positive and finite"));
            }
        }
        for (path, v) in [
            ("lyapnorm.epsilon", self.lyapnorm.epsilon),
            ("holonomy.delta", self.holonomy.delta),
            ("holonomy.alpha", self.holonomy.alpha),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(path, "must be positive and finite"));
                }
            }
        }
        let nonzero = [
            ("spectrum.samples", self.spectrum.samples),
            ("spectrum.iterations", self.spectrum.iterations),
            ("lyapnorm.truncation", self.lyapnorm.truncation),
            ("livsic.n_points", self.livsic.n_points),
            ("livsic.scan_points", self.livsic.scan_points),
            ("holonomy.N", self.holonomy.block),
            ("holonomy.k_max", self.holonomy.k_max),
            ("holonomy.max_iter", self.holonomy.max_iter),
            ("holonomy.pair_budget", self.holonomy.pair_budget),
        ];
        for (path, v) in nonzero {
            if v == 0 {
                return Err(invalid(path, "must be at least 1"));
            }
        }
        for (path, band) in [("livsic.slope_band", Some(self.livsic.slope_band)), ("holonomy.slope_band", self.holonomy.slope_band)] {
            if let Some([lo, hi]) = band {
                if !(lo < hi) {
                    return Err(invalid(path, "lower end must be below upper end"));
                }
            }
        }
        if self.holonomy.max_leaf_offset > 0.05 {
            return Err(invalid("holonomy.max_leaf_offset", "must not exceed the local leaf radius 0.05"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"seed": 1, "system": "cat_map", "cocycle": {"identity": {"dim": 2}}}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL, "inline").unwrap();
        assert_eq!(c.system, SystemConfig::CatMap);
        assert_eq!(c.livsic, LivsicConfig::default());
        assert!(c.expect_fail.is_empty());
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let text = r#"{"seed": 1, "system": "cat_map", "cocycle": {"identity": {"dim": 2}},
                       "holonomy": {"theta": 0.1, "thetta": 0.2}}"#;
        let err = ExperimentConfig::from_json(text, "inline").unwrap_err().to_string();
        assert!(err.contains("holonomy.thetta"), "{err}");
        let text = r#"{"seed": 1, "system": "cat_map",
                       "cocycle": {"rotation_coboundary": {"angle": {"sine": {"c": 0.3, "k": 1}}, "shear": 0.2}}}"#;
        let err = ExperimentConfig::from_json(text, "inline").unwrap_err().to_string();
        assert!(err.contains("cocycle.rotation_coboundary.angle.sine.k"), "{err}");
    }

    #[test]
    fn seed_is_required() {
        let err = ExperimentConfig::from_json(r#"{"system": "cat_map", "cocycle": "derivative"}"#, "inline").unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn tolerances_must_be_positive() {
        let text = r#"{"seed": 1, "system": "cat_map", "cocycle": "derivative", "holonomy": {"tol": 0}}"#;
        let err = ExperimentConfig::from_json(text, "inline").unwrap_err().to_string();
        assert!(err.contains("holonomy.tol"), "{err}");
    }

    #[test]
    fn round_trips() {
        let c = ExperimentConfig::from_json(MINIMAL, "inline").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text, "echo").unwrap(), c);
    }
}
