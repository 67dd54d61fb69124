//! Experiment configuration: one JSON document, every field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use overlap_reg::{
    BaseRegistrar, EoeSchedule, GmmParams, IcpParams, IcpVariant, OrbitPreset, PenaltyConstants, SensorFov,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub algorithms: Vec<BaseRegistrar>,
    pub eoe: EoeConfig,
    pub init: InitPolicy,
    /// Output directory. Relative paths resolve against the working directory.
    pub output: PathBuf,
    /// When set, overrides the preset seed, the manifest downsample seed and
    /// every GMM seed.
    pub seed: Option<u64>,
    pub timing: TimingConfig,
    pub weights: WeightsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            algorithms: default_algorithms(),
            eoe: EoeConfig::default(),
            init: InitPolicy::default(),
            output: PathBuf::from("out"),
            seed: None,
            timing: TimingConfig::default(),
            weights: WeightsConfig::default(),
        }
    }
}

/// Plain, trimmed, fractional and IRLS ICP followed by GMM.
pub fn default_algorithms() -> Vec<BaseRegistrar> {
    vec![
        BaseRegistrar::Icp(IcpParams::default()),
        BaseRegistrar::Icp(IcpParams::with_variant(IcpVariant::trimmed())),
        BaseRegistrar::Icp(IcpParams::with_variant(IcpVariant::fractional())),
        BaseRegistrar::Icp(IcpParams::with_variant(IcpVariant::irls())),
        BaseRegistrar::Gmm(GmmParams::default()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Views simulated in memory from a world cloud.
    Synthetic {
        #[serde(default)]
        preset: OrbitPreset,
        /// PLY or XYZ world cloud; the procedural bunny when absent.
        #[serde(default)]
        world: Option<PathBuf>,
    },
    /// Path to a dataset manifest JSON.
    Manifest(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            preset: OrbitPreset::default(),
            world: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EoeMode {
    Off,
    On,
    /// Run every algorithm with and without the overlap loop.
    #[default]
    Both,
}

impl EoeMode {
    pub fn cells(self) -> &'static [bool] {
        match self {
            EoeMode::Off => &[false],
            EoeMode::On => &[true],
            EoeMode::Both => &[false, true],
        }
    }
}

/// A sensor view frustum in config units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FovConfig {
    pub range_min: f64,
    /// Unbounded when absent.
    #[serde(default)]
    pub range_max: Option<f64>,
    pub horizontal_deg: f64,
    pub vertical_deg: f64,
}

impl FovConfig {
    pub fn to_fov(&self) -> Result<SensorFov, CliError> {
        Ok(SensorFov::from_degrees(
            self.range_min,
            self.range_max.unwrap_or(f64::INFINITY),
            self.horizontal_deg,
            self.vertical_deg,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EoeConfig {
    pub mode: EoeMode,
    /// Frustum shared by every sensor. Synthetic datasets default to the
    /// preset's frustum.
    pub fov: Option<FovConfig>,
    /// Per-frame frusta overriding `fov`; empty or one per dataset frame.
    pub frame_fovs: Vec<FovConfig>,
    pub penalty: PenaltyConstants,
    pub schedule: EoeSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    #[default]
    Identity,
    /// Seed each pair with the previous pair's estimate.
    PriorPoseChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 1_000, 10_000, 100_000, 1_000_000],
            trials: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    /// `[target, source]` positions in the (strided) frame list.
    pub pair: [usize; 2],
    /// Index into `algorithms`.
    pub algorithm: usize,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { pair: [0, 1], algorithm: 0 }
    }
}

impl ExperimentConfig {
    /// Reads a config; dataset paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.dataset {
            DatasetSource::Synthetic { world, .. } => world.iter_mut().for_each(resolve),
            DatasetSource::Manifest(p) => resolve(p),
        }
        Ok(config)
    }

    /// Propagates the seed and fills derived defaults so the echoed config
    /// states every value that was used.
    pub fn resolve(mut self) -> Self {
        if let Some(seed) = self.seed {
            if let DatasetSource::Synthetic { preset, .. } = &mut self.dataset {
                preset.seed = seed;
            }
            for alg in &mut self.algorithms {
                if let BaseRegistrar::Gmm(p) = alg {
                    p.seed = seed;
                }
            }
        }
        if let (None, DatasetSource::Synthetic { preset, .. }) = (&self.eoe.fov, &self.dataset) {
            self.eoe.fov = Some(FovConfig {
                range_min: preset.psi_min,
                range_max: preset.psi_max.is_finite().then_some(preset.psi_max),
                horizontal_deg: preset.fov_deg,
                vertical_deg: preset.fov_deg,
            });
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.algorithms.is_empty() {
            return Err(CliError::Config("at least one algorithm is required".into()));
        }
        for alg in &self.algorithms {
            alg.validate()?;
        }
        match &self.dataset {
            DatasetSource::Synthetic { preset, world } => {
                preset.view_specs()?;
                if let Some(w) = world {
                    require_file(w)?;
                }
            }
            DatasetSource::Manifest(p) => require_file(p)?,
        }
        self.eoe.penalty.validate()?;
        self.eoe.schedule.validate()?;
        if let Some(f) = &self.eoe.fov {
            f.to_fov()?;
        }
        for f in &self.eoe.frame_fovs {
            f.to_fov()?;
        }
        if self.eoe.mode != EoeMode::Off && self.eoe.fov.is_none() && self.eoe.frame_fovs.is_empty() {
            return Err(CliError::Config("eoe needs a sensor fov for manifest datasets".into()));
        }
        if self.timing.sizes.is_empty() || self.timing.sizes.contains(&0) || self.timing.trials == 0 {
            return Err(CliError::Config("timing needs non-empty positive sizes and trials >= 1".into()));
        }
        if self.weights.algorithm >= self.algorithms.len() || self.weights.pair[0] == self.weights.pair[1] {
            return Err(CliError::Config("weights needs a valid algorithm index and two distinct frames".into()));
        }
        Ok(())
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c = c.resolve();
        c.validate().unwrap();
        assert!(c.eoe.fov.is_some());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"algoritms": []}"#).is_err());
    }

    #[test]
    fn seed_propagates() {
        let c = ExperimentConfig {
            seed: Some(42),
            ..Default::default()
        }
        .resolve();
        let DatasetSource::Synthetic { preset, .. } = &c.dataset else { panic!() };
        assert_eq!(preset.seed, 42);
        assert!(c.algorithms.iter().any(|a| matches!(a, BaseRegistrar::Gmm(p) if p.seed == 42)));
    }

    #[test]
    fn invalid_configs_fail_validation() {
        let none = ExperimentConfig {
            algorithms: vec![],
            ..Default::default()
        };
        assert!(none.validate().is_err());
        let missing = ExperimentConfig {
            dataset: DatasetSource::Manifest("/nonexistent/manifest.json".into()),
            ..Default::default()
        };
        assert!(missing.validate().unwrap_err().to_string().contains("does not exist"));
    }

    #[test]
    fn preset_fov_is_echoed_exactly() {
        let c = ExperimentConfig::default().resolve();
        let DatasetSource::Synthetic { preset, .. } = &c.dataset else { panic!() };
        assert_eq!(c.eoe.fov.unwrap().to_fov().unwrap(), preset.fov().unwrap());
    }

    #[test]
    fn unbounded_range_is_the_full_sphere() {
        let f = FovConfig {
            range_min: 0.0,
            range_max: None,
            horizontal_deg: 360.0,
            vertical_deg: 180.0,
        };
        assert_eq!(f.to_fov().unwrap(), SensorFov::full_sphere());
    }
}
