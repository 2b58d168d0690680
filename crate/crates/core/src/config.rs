//! Toolkit configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hal::{DriveConfig, SensorNoise};
use crate::orchestrator::{
    BatteryConfig, NoiseConfig, StaticTorqueConfig, ThermalConfig, VelocitySweepConfig,
};
use crate::plant::PlantParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything a run depends on apart from the seed and the backend.
///
/// Sections left out of a file take their defaults; fields within a section are all required.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub plant: PlantParams<f64>,
    pub drive: DriveConfig,
    pub sensors: SensorNoise,
    pub static_torque: StaticTorqueConfig,
    pub velocity_sweep: VelocitySweepConfig,
    pub thermal: ThermalConfig,
    pub noise: NoiseConfig,
    pub battery: BatteryConfig,
}

impl ToolkitConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ToolkitConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical text form; loading it back gives an identical dump.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.plant.validate().map_err(|e| invalid(&e))?;
        if !self.drive.velocity.is_valid() || !self.drive.position.is_valid() {
            return Err(ConfigError::Invalid(
                "drive gains must be >= 0 with a positive integral limit".into(),
            ));
        }
        if self.drive.velocity_limit.is_nan() || self.drive.velocity_limit <= 0.0 {
            return Err(ConfigError::Invalid(
                "drive velocity_limit must be positive".into(),
            ));
        }
        let s = &self.sensors;
        if [s.tension_sigma, s.temperature_sigma, s.acoustic_sigma]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(ConfigError::Invalid(
                "sensor sigmas must be finite and >= 0".into(),
            ));
        }
        self.static_torque.validate().map_err(|e| invalid(&e))?;
        self.velocity_sweep.validate().map_err(|e| invalid(&e))?;
        self.thermal.validate().map_err(|e| invalid(&e))?;
        self.noise.validate().map_err(|e| invalid(&e))?;
        self.battery.validate().map_err(|e| invalid(&e))?;
        if self.thermal.hold_torque > self.plant.motor1.rated_torque {
            return Err(ConfigError::Invalid(format!(
                "thermal hold_torque {} exceeds motor 1 rated torque {}",
                self.thermal.hold_torque, self.plant.motor1.rated_torque
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_load_dump_is_identical() {
        let text = ToolkitConfig::default().to_toml_string();
        let back = ToolkitConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, ToolkitConfig::default());
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn missing_sections_take_defaults() {
        let cfg = ToolkitConfig::from_toml_str(
            "[sensors]\ntension_sigma = 0.0\ntemperature_sigma = 0.0\nacoustic_sigma = 0.0\n",
        )
        .unwrap();
        assert_eq!(cfg.sensors, SensorNoise::none());
        assert_eq!(cfg.thermal, ThermalConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            ToolkitConfig::from_toml_str("bogus = 1\n"),
            Err(ConfigError::Parse(_))
        ));
        let mut cfg = ToolkitConfig::default();
        cfg.thermal.hold_torque = 10.0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = ToolkitConfig::default();
        cfg.static_torque.torque_levels = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ToolkitConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.battery.log_period_s = 1.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
