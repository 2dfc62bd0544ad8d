//! A validated configuration together with the objects it describes.

use cocycle_core::cocycle::{AngleField, CocycleMap, CocycleVariant, CylinderTable, GroundTruthTransfer};
use cocycle_core::dynamics::{BaseSystem, TorusAutomorphism, TorusOptions};
use cocycle_core::holonomy::{DominationOptions, HolderOptions, HolonomyOptions};
use cocycle_core::linalg::Matrix;
use cocycle_core::livsic::{NearReturnOptions, TransferOptions};
use cocycle_core::lyapnorm::LyapunovNormOptions;

use crate::config::{AngleConfig, CocycleConfig, ConfigError, ExperimentConfig, SystemConfig};

pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: BaseSystem,
    pub cocycle: CocycleMap,
}

fn invalid(path: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn build_system(cfg: &SystemConfig) -> Result<BaseSystem, ConfigError> {
    match cfg {
        SystemConfig::CatMap => Ok(BaseSystem::cat_map()),
        SystemConfig::Torus { matrix } => TorusAutomorphism::new(matrix, TorusOptions::default())
            .map(BaseSystem::Torus)
            .map_err(|e| invalid("system.torus.matrix", e)),
        SystemConfig::FullShift { alphabet } => {
            BaseSystem::full_shift(*alphabet).map_err(|e| invalid("system.full_shift.alphabet", e))
        }
    }
}

fn angle(cfg: &AngleConfig) -> AngleField {
    match *cfg {
        AngleConfig::Sine { c } => AngleField::Sine { c },
        AngleConfig::RootSine { c, nu } => AngleField::RootSine { c, nu },
        AngleConfig::Lacunary { c, nu, terms } => AngleField::Lacunary { c, nu, terms },
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<Matrix, ConfigError> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(invalid(path, "matrix must be square and nonempty"));
    }
    Ok(Matrix::from_rows(rows))
}

fn build_cocycle(cfg: &CocycleConfig, system: &BaseSystem) -> Result<CocycleMap, ConfigError> {
    let torus = match system {
        BaseSystem::Torus(t) => Some(t),
        BaseSystem::Shift(_) => None,
    };
    let alphabet = match system {
        BaseSystem::Shift(s) => Some(s.alphabet()),
        BaseSystem::Torus(_) => None,
    };
    match cfg {
        CocycleConfig::Identity { dim } => {
            if *dim == 0 {
                return Err(invalid("cocycle.identity.dim", "must be at least 1"));
            }
            Ok(CocycleMap::identity(*dim))
        }
        CocycleConfig::Constant { matrix } => {
            CocycleMap::constant(matrix_from_rows(matrix, "cocycle.constant.matrix")?).map_err(|e| invalid("cocycle.constant.matrix", e))
        }
        CocycleConfig::Derivative => {
            let t = torus.ok_or_else(|| invalid("cocycle", "derivative cocycles need a torus system"))?;
            CocycleMap::constant(t.real_matrix()).map_err(|e| invalid("cocycle", e))
        }
        CocycleConfig::RotationCoboundary { angle: a, shear } => {
            if torus.map(|t| t.dim()) != Some(2) {
                return Err(invalid("cocycle.rotation_coboundary", "needs a 2-torus system"));
            }
            CocycleMap::coboundary(GroundTruthTransfer::TorusRotation {
                angle: angle(a),
                shear: *shear,
            })
            .map_err(|e| invalid("cocycle.rotation_coboundary", e))
        }
        CocycleConfig::CylinderCoboundary { depth, spread, seed } => {
            let k = alphabet.ok_or_else(|| invalid("cocycle", "cylinder coboundaries need a shift system"))?;
            let table = CylinderTable::seeded(*depth, k, 2, *spread, *seed).map_err(|e| invalid("cocycle.cylinder_coboundary", e))?;
            CocycleMap::coboundary(GroundTruthTransfer::Cylinder(table)).map_err(|e| invalid("cocycle.cylinder_coboundary", e))
        }
        CocycleConfig::LocallyConstant { depth, spread, seed } => {
            let k = alphabet.ok_or_else(|| invalid("cocycle", "locally constant cocycles need a shift system"))?;
            let table = CylinderTable::seeded(*depth, k, 2, *spread, *seed).map_err(|e| invalid("cocycle.locally_constant", e))?;
            CocycleMap::new(1.0, CocycleVariant::LocallyConstant(table)).map_err(|e| invalid("cocycle.locally_constant", e))
        }
        CocycleConfig::TorusRotation { frequency, phase } => {
            let t = torus.ok_or_else(|| invalid("cocycle", "torus rotations need a torus system"))?;
            if frequency.len() != t.dim() {
                return Err(invalid("cocycle.torus_rotation.frequency", "length must equal the torus dimension"));
            }
            Ok(CocycleMap::torus_rotation(frequency.clone(), *phase))
        }
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let system = build_system(&config.system)?;
        let cocycle = build_cocycle(&config.cocycle, &system)?;
        Ok(Experiment { config, system, cocycle })
    }

    pub fn truth(&self) -> Option<&GroundTruthTransfer> {
        self.cocycle.ground_truth()
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.system, BaseSystem::Torus(_))
    }

    /// Why log-log scaling fits say nothing for this run, if they don't: on
    /// the shift a locally constant cocycle has differences that are exactly
    /// zero below its cylinder scale.
    pub fn vacuous_scaling(&self) -> Option<String> {
        match (&self.system, self.cocycle.locality_depth()) {
            (BaseSystem::Shift(_), Some(m)) => Some(format!("cocycle depends on x_-{m}..x_{m} only; scaling fits are vacuous")),
            _ => None,
        }
    }

    /// Independent stream for each named purpose.
    pub fn seed(&self, tag: &str) -> u64 {
        let h = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        mix(self.config.seed ^ mix(h))
    }

    pub fn seed_indexed(&self, tag: &str, i: usize) -> u64 {
        mix(self.seed(tag) ^ mix(i as u64))
    }

    pub fn alpha(&self) -> f64 {
        self.config.holonomy.alpha.unwrap_or(self.cocycle.alpha)
    }

    pub fn epsilon(&self) -> f64 {
        self.config
            .lyapnorm
            .epsilon
            .unwrap_or_else(|| LyapunovNormOptions::default_epsilon(self.alpha(), self.system.eta()))
    }

    pub fn n_max(&self) -> u32 {
        let default = if self.is_torus() { 10 } else { 8 };
        self.config.livsic.n_max.unwrap_or(default)
    }

    pub fn norm_options(&self) -> LyapunovNormOptions {
        let c = &self.config.lyapnorm;
        LyapunovNormOptions {
            epsilon: self.epsilon(),
            truncation: c.truncation,
            warmup: c.warmup,
            spectrum_iters: c.spectrum_iters,
        }
    }

    pub fn transfer_options(&self, n_points: usize) -> TransferOptions {
        let l = &self.config.livsic;
        TransferOptions {
            n_points,
            norm: self.norm_options(),
            block_bound: self.config.lyapnorm.block_bound,
            beta: l.beta,
            zero_exponent_samples: l.zero_exponent_samples,
            zero_exponent_iters: l.zero_exponent_iters,
            allow_nonzero_exponents: l.allow_nonzero_exponents,
            seed: self.seed("zero-exponents"),
        }
    }

    pub fn near_return_options(&self) -> NearReturnOptions {
        let l = &self.config.livsic;
        NearReturnOptions {
            beta: l.beta,
            h_min: l.h_min,
            max_pairs_per_decade: l.max_pairs_per_decade,
            seed: self.seed("near-returns"),
            ..NearReturnOptions::default()
        }
    }

    pub fn domination_options(&self) -> DominationOptions {
        let h = &self.config.holonomy;
        DominationOptions {
            block: h.block,
            theta: h.theta,
            k_max: h.k_max,
        }
    }

    pub fn holonomy_options(&self) -> HolonomyOptions {
        HolonomyOptions {
            tol: self.config.holonomy.tol,
            max_iter: self.config.holonomy.max_iter,
            domination: self.domination_options(),
        }
    }

    pub fn slope_band(&self) -> [f64; 2] {
        let a = self.alpha();
        self.config.holonomy.slope_band.unwrap_or([a - 0.15, a + 0.15])
    }

    pub fn holder_options(&self) -> HolderOptions {
        let [lo, hi] = self.slope_band();
        let a = self.alpha();
        HolderOptions {
            pair_budget: self.config.holonomy.pair_budget,
            radius: self.config.holonomy.delta.map(|d| 0.5 * d),
            min_entries: 1000.min(self.config.livsic.n_points),
            band: (a - lo, hi - a),
            seed: self.seed("holder"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(text: &str) -> Result<Experiment, ConfigError> {
        Experiment::new(ExperimentConfig::from_json(text, "inline")?)
    }

    #[test]
    fn incompatible_pairs_are_config_errors() {
        assert!(exp(r#"{"seed": 1, "system": {"full_shift": {"alphabet": 2}}, "cocycle": "derivative"}"#).is_err());
        assert!(exp(r#"{"seed": 1, "system": "cat_map", "cocycle": {"locally_constant": {"depth": 1, "spread": 0.1, "seed": 2}}}"#).is_err());
        assert!(exp(r#"{"seed": 1, "system": "cat_map", "cocycle": {"constant": {"matrix": [[1, 0], [0, 0]]}}}"#).is_err());
        assert!(exp(r#"{"seed": 1, "system": {"full_shift": {"alphabet": 1}}, "cocycle": {"identity": {"dim": 2}}}"#).is_err());
    }

    #[test]
    fn defaults_follow_the_cocycle() {
        let e = exp(r#"{"seed": 1, "system": "cat_map", "cocycle": {"rotation_coboundary": {"angle": {"lacunary": {"c": 0.3, "nu": 0.5, "terms": 30}}, "shear": 0.2}}}"#).unwrap();
        assert_eq!(e.alpha(), 0.5);
        assert_eq!(e.slope_band(), [0.35, 0.65]);
        assert!((e.epsilon() - 0.025 * e.system.eta()).abs() < 1e-15);
        assert_eq!(e.n_max(), 10);
    }

    #[test]
    fn seeds_are_distinct_per_tag() {
        let e = exp(r#"{"seed": 1, "system": "cat_map", "cocycle": "derivative"}"#).unwrap();
        assert_ne!(e.seed("a"), e.seed("b"));
        assert_ne!(e.seed_indexed("a", 0), e.seed_indexed("a", 1));
        assert_eq!(e.seed("a"), e.seed("a"));
    }
}
