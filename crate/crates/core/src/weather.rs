//! Weather disturbance series: a seeded synthetic diurnal generator and a
//! CSV loader for measured data, plus block-average resampling.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::Disturbance;

pub const SECONDS_PER_DAY: u32 = 86_400;

/// Column header expected by [`load_weather_csv`].
pub const WEATHER_CSV_HEADER: [&str; 5] = ["time_s", "rad_Wm2", "co2_kgm3", "temp_C", "hum_kgm3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    pub period_s: f64,
    pub samples: Vec<Disturbance>,
    pub source_tag: String,
}

impl WeatherSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelProfile {
    pub mean: f64,
    pub amplitude: f64,
    /// Stationary standard deviation of the additive noise.
    pub noise: f64,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self {
            mean: 0.0,
            amplitude: 0.0,
            noise: 0.0,
        }
    }
}

/// Shape of the synthetic diurnal weather.
///
/// Radiation follows a half-wave rectified sinusoid starting at
/// `sunrise_s`; temperature and humidity follow sinusoids lagging sunrise by
/// `lag_s`; outdoor CO2 is constant. Every channel carries AR(1) noise with
/// lag-one correlation `noise_correlation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherProfile {
    pub radiation: ChannelProfile,
    pub co2: ChannelProfile,
    pub temperature: ChannelProfile,
    pub humidity: ChannelProfile,
    /// Seconds after midnight at which radiation becomes positive.
    pub sunrise_s: f64,
    /// Delay of the temperature/humidity cycle relative to sunrise.
    pub lag_s: f64,
    pub noise_correlation: f64,
}

impl Default for WeatherProfile {
    fn default() -> Self {
        Self {
            radiation: ChannelProfile {
                mean: 0.0,
                amplitude: 300.0,
                noise: 8.0,
            },
            co2: ChannelProfile {
                mean: 8.0e-4,
                amplitude: 0.0,
                noise: 2.0e-5,
            },
            temperature: ChannelProfile {
                mean: 10.0,
                amplitude: 5.0,
                noise: 1.0,
            },
            humidity: ChannelProfile {
                mean: 5.0e-3,
                amplitude: 1.0e-3,
                noise: 2.0e-4,
            },
            sunrise_s: 6.0 * 3600.0,
            lag_s: 3.0 * 3600.0,
            noise_correlation: 0.9,
        }
    }
}

impl WeatherProfile {
    /// The default profile with every noise level set to zero.
    pub fn noiseless() -> Self {
        let mut p = Self::default();
        p.radiation.noise = 0.0;
        p.co2.noise = 0.0;
        p.temperature.noise = 0.0;
        p.humidity.noise = 0.0;
        p
    }

    pub fn validate(&self) -> Result<()> {
        let channels = [
            ("radiation", &self.radiation),
            ("co2", &self.co2),
            ("temperature", &self.temperature),
            ("humidity", &self.humidity),
        ];
        for (name, c) in channels {
            if !(c.mean.is_finite() && c.amplitude.is_finite() && c.noise.is_finite()) {
                return Err(Error::InvalidProfile(format!("{name}: non-finite field")));
            }
            if c.amplitude < 0.0 || c.noise < 0.0 {
                return Err(Error::InvalidProfile(format!(
                    "{name}: amplitude and noise must be >= 0"
                )));
            }
        }
        if self.radiation.mean < 0.0 {
            return Err(Error::InvalidProfile("radiation mean must be >= 0".into()));
        }
        if self.co2.mean - self.co2.amplitude < 0.0 {
            return Err(Error::InvalidProfile("outdoor CO2 would be negative".into()));
        }
        if self.humidity.mean - self.humidity.amplitude <= 0.0 {
            return Err(Error::InvalidProfile("outdoor humidity must stay positive".into()));
        }
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return Err(Error::InvalidProfile("noise_correlation must lie in [0, 1)".into()));
        }
        if !self.sunrise_s.is_finite() || !self.lag_s.is_finite() {
            return Err(Error::InvalidProfile("non-finite phase".into()));
        }
        Ok(())
    }
}

/// AR(1) process with stationary standard deviation `std`.
struct Ar1 {
    value: f64,
    rho: f64,
    std: f64,
}

impl Ar1 {
    fn new(rho: f64, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let z: f64 = StandardNormal.sample(rng);
        Self {
            value: std * z,
            rho,
            std,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let current = self.value;
        self.value = self.rho * self.value + self.std * (1.0 - self.rho * self.rho).sqrt() * z;
        current
    }
}

/// `sin(2π·turns)` with exact zeros at whole and half turns, so sunrise and
/// sunset are exactly dark.
fn sin_day(turns: f64) -> f64 {
    let f = turns.rem_euclid(1.0);
    if f == 0.0 || f == 0.5 {
        0.0
    } else {
        (2.0 * std::f64::consts::PI * f).sin()
    }
}

pub fn synth_weather(days: u32, period_s: u32, seed: u64, profile: &WeatherProfile) -> Result<WeatherSeries> {
    if days == 0 {
        return Err(Error::InvalidArgument("days must be >= 1".into()));
    }
    if period_s == 0 || !SECONDS_PER_DAY.is_multiple_of(period_s) {
        return Err(Error::InvalidArgument(format!(
            "period {period_s} s must divide one day"
        )));
    }
    profile.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = profile.noise_correlation;
    let mut rad_noise = Ar1::new(rho, profile.radiation.noise, &mut rng);
    let mut co2_noise = Ar1::new(rho, profile.co2.noise, &mut rng);
    let mut temp_noise = Ar1::new(rho, profile.temperature.noise, &mut rng);
    let mut hum_noise = Ar1::new(rho, profile.humidity.noise, &mut rng);

    let n = (days * (SECONDS_PER_DAY / period_s)) as usize;
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        // time of day from integer arithmetic keeps the noiseless series exactly periodic
        let tod = ((k as u64 * period_s as u64) % SECONDS_PER_DAY as u64) as f64;

        let clear = (profile.radiation.mean
            + profile.radiation.amplitude * sin_day((tod - profile.sunrise_s) / SECONDS_PER_DAY as f64))
        .max(0.0);
        let rn = rad_noise.next(&mut rng);
        let radiation = if clear > 0.0 { (clear + rn).max(0.0) } else { 0.0 };

        let cycle = sin_day((tod - profile.sunrise_s - profile.lag_s) / SECONDS_PER_DAY as f64);
        let outdoor_co2 = (profile.co2.mean + profile.co2.amplitude * cycle + co2_noise.next(&mut rng)).max(0.0);
        let outdoor_temp = profile.temperature.mean + profile.temperature.amplitude * cycle + temp_noise.next(&mut rng);
        let outdoor_humidity =
            (profile.humidity.mean + profile.humidity.amplitude * cycle + hum_noise.next(&mut rng)).max(0.0);

        samples.push(Disturbance::new(radiation, outdoor_co2, outdoor_temp, outdoor_humidity));
    }

    Ok(WeatherSeries {
        period_s: period_s as f64,
        samples,
        source_tag: format!("synthetic:seed={seed}"),
    })
}

fn parse_cell(record: &csv::StringRecord, row: usize, col: usize) -> Result<f64> {
    let column = WEATHER_CSV_HEADER[col].to_string();
    let raw = record.get(col).ok_or_else(|| Error::Parse {
        row,
        column: column.clone(),
        message: "missing cell".into(),
    })?;
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row,
        column: column.clone(),
        message: format!("not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column,
            message: format!("non-finite value {raw:?}"),
        });
    }
    if col != 0 && col != 3 && v < 0.0 {
        return Err(Error::Parse {
            row,
            column,
            message: format!("negative value {v}"),
        });
    }
    Ok(v)
}

/// Loads a measured weather series. Row numbers in errors are 1-based data rows.
pub fn load_weather_csv(path: impl AsRef<Path>) -> Result<WeatherSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != WEATHER_CSV_HEADER {
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            message: format!(
                "expected {:?}, found {:?}",
                WEATHER_CSV_HEADER.join(","),
                names.join(",")
            ),
        });
    }

    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != WEATHER_CSV_HEADER.len() {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected 5 cells, found {}", record.len()),
            });
        }
        let t = parse_cell(&record, row, 0)?;
        let vals: Vec<f64> = (1..5).map(|c| parse_cell(&record, row, c)).collect::<Result<_>>()?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::NonMonotoneTime { row });
            }
        }
        times.push(t);
        samples.push(Disturbance::new(vals[0], vals[1], vals[2], vals[3]));
    }

    if times.len() < 2 {
        return Err(Error::InsufficientData(
            "weather file needs at least two rows to infer the period".into(),
        ));
    }
    let period = times[1] - times[0];
    for (i, w) in times.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if (gap - period).abs() > 0.01 * period {
            return Err(Error::IrregularPeriod {
                row: i + 2,
                gap,
                period,
            });
        }
    }

    Ok(WeatherSeries {
        period_s: period,
        samples,
        source_tag: path.display().to_string(),
    })
}

/// Block-average decimation to a coarser period that is an integer multiple
/// of the current one. A trailing partial block is dropped.
pub fn resample(series: &WeatherSeries, new_period_s: f64) -> Result<WeatherSeries> {
    let incompatible = || Error::IncompatiblePeriods {
        from: series.period_s,
        to: new_period_s,
    };
    if !(new_period_s.is_finite() && new_period_s >= series.period_s) {
        return Err(incompatible());
    }
    let ratio = new_period_s / series.period_s;
    let factor = ratio.round();
    if (ratio - factor).abs() > 1e-9 * ratio {
        return Err(incompatible());
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(series.clone());
    }

    let samples: Vec<Disturbance> = series
        .samples
        .chunks_exact(factor)
        .map(|block| {
            let mut acc = [0.0; 4];
            for d in block {
                for (a, v) in acc.iter_mut().zip(d.to_array()) {
                    *a += v;
                }
            }
            Disturbance::from_array(acc.map(|a| a / factor as f64))
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot fill one block of {factor}",
            series.len()
        )));
    }
    Ok(WeatherSeries {
        period_s: new_period_s,
        samples,
        source_tag: series.source_tag.clone(),
    })
}
