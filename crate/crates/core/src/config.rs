use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{describe_toml_error, Error, Result};
use crate::eversion::GrowthParams;
use crate::kinematics::TipGeometry;
use crate::mech::{reference_catalog, ServoSpec, SpoolSpec};
use crate::spray::SpraySpec;

/// Random disturbances applied to each new steering command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviation of the heading error per axis, degrees.
    pub aim_sigma_deg: f64,
    /// Standard deviation of the tendon pull error per bend axis, mm.
    pub actuation_sigma_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Fixed simulation step, s.
    pub dt: f64,
    pub telemetry_hz: f64,
    /// Pressure regulator time constant, s.
    pub regulator_tau: f64,
    /// Length of the everting body, m.
    pub max_length: f64,
    pub growth: GrowthParams,
    pub geometry: TipGeometry,
    pub spool: SpoolSpec,
    pub servo: ServoSpec,
    pub spray: SpraySpec,
    pub noise: NoiseModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            telemetry_hz: 20.0,
            regulator_tau: 0.5,
            max_length: 5.0,
            growth: GrowthParams::default(),
            geometry: TipGeometry::default(),
            spool: SpoolSpec::default(),
            servo: reference_catalog()
                .into_iter()
                .find(|s| s.name == "DM-S0090MD")
                .expect("reference servo"),
            spray: SpraySpec::default(),
            noise: NoiseModel::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::input("dt must be positive"));
        }
        if !(self.telemetry_hz > 0.0) || self.telemetry_every() == 0 {
            return Err(Error::input(
                "telemetry rate must be positive and at most 1/dt",
            ));
        }
        if !(self.regulator_tau > 0.0) {
            return Err(Error::input("regulator_tau must be positive"));
        }
        if !(self.max_length >= 0.0) {
            return Err(Error::input("max_length must be non-negative"));
        }
        if !(self.growth.rate_coeff >= 0.0 && self.growth.ledger_spacing > 0.0) {
            return Err(Error::input(
                "growth rate and ledger spacing must be positive",
            ));
        }
        if !(self.noise.aim_sigma_deg >= 0.0 && self.noise.actuation_sigma_mm >= 0.0) {
            return Err(Error::input("noise sigmas must be non-negative"));
        }
        self.geometry.validate()?;
        self.servo.validate()?;
        self.spray.validate()?;
        SpoolSpec::new(self.spool.radius)?;
        Ok(())
    }

    /// Simulation ticks between telemetry frames.
    pub fn telemetry_every(&self) -> u64 {
        (1.0 / (self.dt * self.telemetry_hz)).round() as u64
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: SimConfig =
            toml::from_str(text).map_err(|e| Error::input(describe_toml_error(text, &e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.telemetry_every(), 5);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = SimConfig::from_toml("dt = 0.005\n[noise]\naim_sigma_deg = 3.0\n").unwrap();
        assert_eq!(c.dt, 0.005);
        assert_eq!(c.telemetry_every(), 10);
        assert_eq!(c.noise.aim_sigma_deg, 3.0);
        assert_eq!(c.geometry, TipGeometry::default());
    }

    #[test]
    fn toml_round_trip() {
        let c = SimConfig::default();
        assert_eq!(SimConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let err = SimConfig::from_toml("dt = 0.01\nbogus = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
        assert!(SimConfig::from_toml("dt = -1.0").is_err());
    }
}
