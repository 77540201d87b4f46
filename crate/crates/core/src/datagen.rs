//! Scenario generation: weather-driven control policy plus a rollout of the
//! greenhouse model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::physics::{self, ControlInput, Disturbance, GreenhouseState, ModelParameters};
use crate::weather::{self, WeatherProfile, WeatherSeries, SECONDS_PER_DAY};

/// One simulated throuple sequence. `states` has one more entry than
/// `controls` and `disturbances`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub seed: u64,
    pub period_s: f64,
    pub states: Vec<GreenhouseState>,
    pub controls: Vec<ControlInput>,
    pub disturbances: Vec<Disturbance>,
}

impl Scenario {
    /// Number of steps N.
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    /// The sub-scenario covering steps `start..start + len`, including the
    /// state after the final step.
    pub fn window(&self, start: usize, len: usize) -> Result<Scenario> {
        if start + len > self.steps() || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "window {start}..{} outside scenario of {} steps",
                start + len,
                self.steps()
            )));
        }
        Ok(Scenario {
            index: self.index,
            seed: self.seed,
            period_s: self.period_s,
            states: self.states[start..=start + len].to_vec(),
            controls: self.controls[start..start + len].to_vec(),
            disturbances: self.disturbances[start..start + len].to_vec(),
        })
    }
}

/// Where scenario disturbances come from.
#[derive(Debug, Clone)]
pub enum WeatherSource {
    Synthetic(WeatherProfile),
    /// Measured series; scenario `j` starts `j` days into the series.
    Measured(WeatherSeries),
}

/// Rule-based climate controller: CO2 dosing and heating proportional to
/// radiation, minimal ventilation only in the dark.
pub fn control_policy(d: &Disturbance) -> ControlInput {
    let r = d.radiation;
    ControlInput {
        co2_injection: r / 10.0,
        ventilation: if r > 1.0 { 0.0 } else { 0.1 },
        heating: 20.0 + r / 5.0,
    }
}

fn scenario_weather(
    source: &WeatherSource,
    index: usize,
    days: u32,
    period_s: u32,
    seed: u64,
) -> Result<Vec<Disturbance>> {
    match source {
        WeatherSource::Synthetic(profile) => Ok(weather::synth_weather(days, period_s, seed, profile)?.samples),
        WeatherSource::Measured(series) => {
            let series = if series.period_s != period_s as f64 {
                weather::resample(series, period_s as f64)?
            } else {
                series.clone()
            };
            let per_day = (SECONDS_PER_DAY / period_s) as usize;
            let start = index * per_day;
            let len = days as usize * per_day;
            if start + len > series.len() {
                return Err(Error::InsufficientData(format!(
                    "measured weather has {} samples, scenario needs {}..{}",
                    series.len(),
                    start,
                    start + len
                )));
            }
            Ok(series.samples[start..start + len].to_vec())
        }
    }
}

/// Generates scenario `index` of `days` days. Its weather seed is derived
/// from `(root_seed, index)`.
pub fn generate_scenario(
    index: usize,
    days: u32,
    period_s: u32,
    root_seed: u64,
    p: &ModelParameters,
    x0: &GreenhouseState,
    source: &WeatherSource,
) -> Result<Scenario> {
    let seed = derive_seed(root_seed, index as u64);
    let wrap = |e: Error| Error::Scenario {
        index,
        source: Box::new(e),
    };
    let disturbances = scenario_weather(source, index, days, period_s, seed).map_err(wrap)?;
    let controls: Vec<ControlInput> = disturbances.iter().map(control_policy).collect();
    let states = physics::simulate(x0, &controls, &disturbances, p, period_s as f64).map_err(wrap)?;
    Ok(Scenario {
        index,
        seed,
        period_s: period_s as f64,
        states,
        controls,
        disturbances,
    })
}

/// Generates scenarios `0..n_scenarios`; independent across `j` and run in
/// parallel. The output order is by index regardless of scheduling.
pub fn generate_scenarios(
    n_scenarios: usize,
    days: u32,
    period_s: u32,
    root_seed: u64,
    p: &ModelParameters,
    x0: &GreenhouseState,
    source: &WeatherSource,
) -> Result<Vec<Scenario>> {
    if n_scenarios == 0 {
        return Err(Error::InvalidArgument("n_scenarios must be >= 1".into()));
    }
    p.validate()?;
    (0..n_scenarios)
        .into_par_iter()
        .map(|j| generate_scenario(j, days, period_s, root_seed, p, x0, source))
        .collect()
}
