//! Versioned TOML configuration shared by every CLI command.
//!
//! ```toml
//! schema = "psdmap/1"
//! seed = 7
//!
//! [scenario]      # ScenarioConfig
//! [estimator]     # EstimatorConfig, used by `fit`
//! [sweep]         # factor grid, used by `sweep`
//! [online]        # OnlineConfig, used by `online`
//! [measurements]  # optional measurement CSV replacing simulation
//! [grid]          # map grid resolution for `evaluate` and `simulate`
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{EstimatorConfig, OnlineConfig, SweepSpec};
use crate::simulate::{MeasurementNoise, QuantizerChoice, ScenarioConfig};

pub const SCHEMA: &str = "psdmap/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo run index for single-run commands.
    #[serde(default)]
    pub run: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<MeasurementSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepFactors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineConfig>,
}

/// Measurement CSV to fit instead of simulating; relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSource {
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Grid points along each axis of the region.
    pub points_per_axis: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { points_per_axis: 51 }
    }
}

/// The `[sweep]` table: factor lists over `[scenario]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFactors {
    /// Defaults to the `[estimator]` table when empty.
    #[serde(default)]
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub sensors: Vec<usize>,
    #[serde(default)]
    pub bits: Vec<u32>,
    #[serde(default)]
    pub measurements_per_sensor: Vec<usize>,
    #[serde(default)]
    pub quantizers: Vec<QuantizerChoice>,
    #[serde(default)]
    pub virtual_measurements: Vec<bool>,
    #[serde(default)]
    pub noise: Vec<MeasurementNoise>,
    pub runs: usize,
}

impl Config {
    /// Parses and validates every section present.
    pub fn from_toml(text: &str) -> Result<Config> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<syntax>", one_line(&e.to_string())))?;
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let key = if key == "." { "<root>".to_string() } else { key };
            Error::config(key, one_line(&e.into_inner().to_string()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::config("schema", format!("expected \"{SCHEMA}\", got \"{}\"", self.schema)));
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        if let Some(e) = &self.estimator {
            e.validate()?;
        }
        if let Some(o) = &self.online {
            o.validate()?;
        }
        if let Some(g) = &self.grid {
            if g.points_per_axis < 2 {
                return Err(Error::config("grid.points_per_axis", "must be at least 2"));
            }
        }
        if self.sweep.is_some() {
            self.sweep_spec()?.validate()?;
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<&ScenarioConfig> {
        self.scenario.as_ref().ok_or_else(|| Error::config("scenario", "missing section"))
    }

    pub fn estimator(&self) -> Result<&EstimatorConfig> {
        self.estimator.as_ref().ok_or_else(|| Error::config("estimator", "missing section"))
    }

    pub fn online(&self) -> Result<&OnlineConfig> {
        self.online.as_ref().ok_or_else(|| Error::config("online", "missing section"))
    }

    pub fn grid(&self) -> GridConfig {
        self.grid.unwrap_or_default()
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let f = self.sweep.as_ref().ok_or_else(|| Error::config("sweep", "missing section"))?;
        let estimators = if f.estimators.is_empty() {
            vec![*self
                .estimator
                .as_ref()
                .ok_or_else(|| Error::config("sweep.estimators", "empty and no [estimator] section"))?]
        } else {
            f.estimators.clone()
        };
        Ok(SweepSpec {
            base: self.scenario()?.clone(),
            estimators,
            sensors: f.sensors.clone(),
            bits: f.bits.clone(),
            measurements_per_sensor: f.measurements_per_sensor.clone(),
            quantizers: f.quantizers.clone(),
            virtual_measurements: f.virtual_measurements.clone(),
            noise: f.noise.clone(),
            runs: f.runs,
            seed: self.seed,
        })
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
