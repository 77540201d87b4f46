//! JSON run configuration. Every field has a default, so `{}` is a valid
//! configuration describing the desk-scale experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::WeatherSource;
use crate::error::{Error, Result};
use crate::forecast::{BandKind, RolloutSpace};
use crate::physics::ModelParameters;
use crate::trainer::TrainConfig;
use crate::weather::{self, WeatherProfile, SECONDS_PER_DAY};

pub const DEFAULT_PARAMETERS: &str = "table2-default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParameterSpec {
    /// Only `"table2-default"` is recognised.
    Named(String),
    Values(ModelParameters),
}

impl Default for ParameterSpec {
    fn default() -> Self {
        ParameterSpec::Named(DEFAULT_PARAMETERS.into())
    }
}

impl ParameterSpec {
    pub fn resolve(&self) -> Result<ModelParameters> {
        let p = match self {
            ParameterSpec::Named(name) if name == DEFAULT_PARAMETERS => ModelParameters::table2(),
            ParameterSpec::Named(name) => {
                return Err(Error::InvalidArgument(format!("unknown parameter set `{name}`")))
            }
            ParameterSpec::Values(p) => *p,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherConfig {
    Synthetic(WeatherProfile),
    /// Path to a measured weather CSV.
    Csv(PathBuf),
}

impl Default for WeatherConfig {
    fn default() -> Self {
        WeatherConfig::Synthetic(WeatherProfile::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub n_samples: usize,
    pub levels: Vec<f64>,
    pub band: BandKind,
    pub rollout_space: RolloutSpace,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            levels: vec![0.95, 0.99],
            band: BandKind::Empirical,
            rollout_space: RolloutSpace::Physical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub parameters: ParameterSpec,
    pub weather: WeatherConfig,
    pub n_scenarios: usize,
    pub days_train: u32,
    pub days_forecast: u32,
    pub period_s: u32,
    pub train: TrainConfig,
    pub forecast: ForecastConfig,
    /// Root seed; per-scenario and per-member seeds derive from it.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            parameters: ParameterSpec::default(),
            weather: WeatherConfig::default(),
            n_scenarios: 8,
            days_train: 11,
            days_forecast: 3,
            period_s: 1800,
            train: TrainConfig::default(),
            forecast: ForecastConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days_train == 0 || self.days_forecast == 0 {
            return Err(Error::InvalidArgument(
                "days_train and days_forecast must be >= 1".into(),
            ));
        }
        if self.n_scenarios == 0 {
            return Err(Error::InvalidArgument("n_scenarios must be >= 1".into()));
        }
        if self.period_s == 0 || !SECONDS_PER_DAY.is_multiple_of(self.period_s) {
            return Err(Error::InvalidArgument(format!(
                "period_s {} must divide one day",
                self.period_s
            )));
        }
        if self.forecast.n_samples == 0 {
            return Err(Error::InvalidArgument("forecast.n_samples must be >= 1".into()));
        }
        self.parameters.resolve()?;
        if let WeatherConfig::Synthetic(p) = &self.weather {
            p.validate()?;
        }
        self.train.validate()
    }

    pub fn steps_per_day(&self) -> usize {
        (SECONDS_PER_DAY / self.period_s) as usize
    }

    pub fn weather_source(&self) -> Result<WeatherSource> {
        Ok(match &self.weather {
            WeatherConfig::Synthetic(p) => WeatherSource::Synthetic(*p),
            WeatherConfig::Csv(path) => WeatherSource::Measured(weather::load_weather_csv(path)?),
        })
    }
}
