//! Monte-Carlo forecasting with the identified model: draw parameter
//! vectors from the weight posterior, roll each out with forward Euler,
//! and summarize the ensemble as a mean with confidence bands.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bnn::{forward, BayesianMLP, NetLayout, ParamSample};
use crate::dataset::{NormStats, FEATURE_DIM};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::physics::{ControlInput, Disturbance, GreenhouseState};

/// State space in which the Euler update is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutSpace {
    /// `x <- x + h * (f * std_dx + mean_dx)` in physical units.
    #[default]
    Physical,
    /// `x̄ <- x̄ + h * f` on the normalized state, denormalized afterwards.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    /// Empirical quantiles of the ensemble.
    #[default]
    Empirical,
    /// `mean ± z * std` with the Gaussian quantile `z`.
    Gaussian,
}

/// Forward-Euler rollout of an arbitrary normalized derivative model
/// `feature -> normalized derivative`.
pub fn euler_rollout_with<F>(
    model: F,
    stats: &NormStats,
    x0: &GreenhouseState,
    u_seq: &[ControlInput],
    d_seq: &[Disturbance],
    h: f64,
    space: RolloutSpace,
) -> Result<Vec<GreenhouseState>>
where
    F: Fn(&[f64; FEATURE_DIM]) -> [f64; 4],
{
    if u_seq.is_empty() {
        return Err(Error::InvalidArgument("empty forecast horizon".into()));
    }
    if u_seq.len() != d_seq.len() {
        return Err(Error::LengthMismatch {
            expected: u_seq.len(),
            actual: d_seq.len(),
        });
    }
    let mut traj = Vec::with_capacity(u_seq.len() + 1);
    traj.push(*x0);
    let mut x = *x0;
    for (k, (u, d)) in u_seq.iter().zip(d_seq).enumerate() {
        let f = model(&stats.feature_row(&x, u, d));
        x = match space {
            RolloutSpace::Physical => {
                let dx = stats.denormalize_derivative(&f).0;
                let xa = x.to_array();
                GreenhouseState::from_array(std::array::from_fn(|i| xa[i] + h * dx[i]))
            }
            RolloutSpace::Normalized => {
                let xn = stats.normalize_state(&x);
                stats.denormalize_state(&std::array::from_fn(|i| xn[i] + h * f[i]))
            }
        };
        if !x.is_finite() {
            return Err(Error::NonFiniteState {
                step: k,
                detail: format!("{:?}", x.to_array()),
            });
        }
        traj.push(x);
    }
    Ok(traj)
}

/// Rollout of the network evaluated at one fixed parameter draw.
#[allow(clippy::too_many_arguments)]
pub fn euler_rollout(
    values: &ParamSample,
    layout: &NetLayout,
    stats: &NormStats,
    x0: &GreenhouseState,
    u_seq: &[ControlInput],
    d_seq: &[Disturbance],
    h: f64,
    space: RolloutSpace,
) -> Result<Vec<GreenhouseState>> {
    if layout.input_dim != FEATURE_DIM || layout.output_dim != 4 {
        return Err(Error::SchemaMismatch(format!(
            "layout {}->{} cannot drive the greenhouse model",
            layout.input_dim, layout.output_dim
        )));
    }
    let model = |feat: &[f64; FEATURE_DIM]| {
        let out = forward(&values.values, layout, feat);
        [out[0], out[1], out[2], out[3]]
    };
    euler_rollout_with(model, stats, x0, u_seq, d_seq, h, space)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    /// `trajectories[member][step]`, all starting at the same state.
    pub trajectories: Vec<Vec<GreenhouseState>>,
    pub period_s: f64,
    pub start_step: usize,
    pub seeds: Vec<u64>,
}

impl ForecastEnsemble {
    pub fn members(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len().saturating_sub(1))
    }
}

/// Runs `n_samples` posterior draws forward from `x0` under known inputs.
/// Member `i` uses the seed `derive_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_forecast(
    net: &BayesianMLP,
    stats: &NormStats,
    x0: &GreenhouseState,
    u_seq: &[ControlInput],
    d_seq: &[Disturbance],
    n_samples: usize,
    h: f64,
    seed: u64,
    space: RolloutSpace,
) -> Result<ForecastEnsemble> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    net.validate()?;
    let seeds: Vec<u64> = (0..n_samples as u64).map(|i| derive_seed(seed, i)).collect();
    let trajectories = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let sample = net.sample_params(s);
            euler_rollout(&sample, &net.layout, stats, x0, u_seq, d_seq, h, space).map_err(|e| Error::Member {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastEnsemble {
        trajectories,
        period_s: h,
        start_step: 0,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub level: f64,
    pub lower: Vec<[f64; 4]>,
    pub upper: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub mean: Vec<[f64; 4]>,
    /// One band per requested level, in request order.
    pub bands: Vec<Band>,
    pub kind: BandKind,
}

impl ForecastSummary {
    pub fn levels(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.level).collect()
    }

    pub fn band(&self, level: f64) -> Option<&Band> {
        self.bands.iter().find(|b| (b.level - level).abs() < 1e-12)
    }
}

/// Linear interpolation between order statistics of a sorted sample
/// (position `q * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn check_level(level: f64, members: usize, kind: BandKind) -> Result<()> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside [0, 1)"
        )));
    }
    if level == 0.0 {
        return Ok(());
    }
    // each empirical tail must hold at least half a member
    let too_few = match kind {
        BandKind::Empirical => members < 2 || level > 1.0 - 1.0 / members as f64 + 1e-12,
        BandKind::Gaussian => members < 2,
    };
    if too_few {
        return Err(Error::TooFewMembers { members, level });
    }
    Ok(())
}

pub fn summarize(ensemble: &ForecastEnsemble, levels: &[f64], kind: BandKind) -> Result<ForecastSummary> {
    let m = ensemble.members();
    if m == 0 {
        return Err(Error::TooFewMembers { members: 0, level: 0.0 });
    }
    let steps = ensemble.trajectories[0].len();
    if let Some(t) = ensemble.trajectories.iter().find(|t| t.len() != steps) {
        return Err(Error::LengthMismatch {
            expected: steps,
            actual: t.len(),
        });
    }
    for &level in levels {
        check_level(level, m, kind)?;
    }
    let z: Vec<f64> = match kind {
        BandKind::Gaussian => {
            let std_normal = Normal::standard();
            levels
                .iter()
                .map(|&l| {
                    if l == 0.0 {
                        0.0
                    } else {
                        std_normal.inverse_cdf(0.5 + l / 2.0)
                    }
                })
                .collect()
        }
        BandKind::Empirical => Vec::new(),
    };

    let mut mean = vec![[0.0; 4]; steps];
    let mut bands: Vec<Band> = levels
        .iter()
        .map(|&level| Band {
            level,
            lower: vec![[0.0; 4]; steps],
            upper: vec![[0.0; 4]; steps],
        })
        .collect();
    let mut column = vec![0.0; m];
    for k in 0..steps {
        for s in 0..4 {
            for (c, traj) in column.iter_mut().zip(&ensemble.trajectories) {
                *c = traj[k].to_array()[s];
            }
            let mu = column.iter().sum::<f64>() / m as f64;
            // the mean of identical members is that member exactly
            let mu = mu.clamp(
                column.iter().copied().fold(f64::INFINITY, f64::min),
                column.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            );
            mean[k][s] = mu;
            match kind {
                BandKind::Empirical => {
                    column.sort_by(f64::total_cmp);
                    for band in &mut bands {
                        let tail = (1.0 - band.level) / 2.0;
                        band.lower[k][s] = quantile_sorted(&column, tail).min(mu);
                        band.upper[k][s] = quantile_sorted(&column, 1.0 - tail).max(mu);
                    }
                }
                BandKind::Gaussian => {
                    let var = if m > 1 {
                        column.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1) as f64
                    } else {
                        0.0
                    };
                    let sd = var.sqrt();
                    for (band, &zl) in bands.iter_mut().zip(&z) {
                        band.lower[k][s] = mu - zl * sd;
                        band.upper[k][s] = mu + zl * sd;
                    }
                }
            }
        }
    }
    Ok(ForecastSummary { mean, bands, kind })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoverage {
    pub level: f64,
    /// Fraction of steps whose true value lies inside the band, per state.
    pub coverage: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    /// RMSE of the ensemble mean against the truth, physical units.
    pub rmse: [f64; 4],
    pub coverage: Vec<LevelCoverage>,
}

impl ForecastMetrics {
    /// RMSE expressed in normalized state units.
    pub fn normalized_rmse(&self, stats: &NormStats) -> [f64; 4] {
        std::array::from_fn(|i| self.rmse[i] / stats.std_x[i])
    }

    pub fn coverage_at(&self, level: f64) -> Option<[f64; 4]> {
        self.coverage
            .iter()
            .find(|c| (c.level - level).abs() < 1e-12)
            .map(|c| c.coverage)
    }
}

pub fn score(summary: &ForecastSummary, truth: &[GreenhouseState]) -> Result<ForecastMetrics> {
    let steps = summary.mean.len();
    if truth.len() != steps {
        return Err(Error::LengthMismatch {
            expected: steps,
            actual: truth.len(),
        });
    }
    let mut sq = [0.0; 4];
    for (m, t) in summary.mean.iter().zip(truth) {
        let t = t.to_array();
        for i in 0..4 {
            sq[i] += (m[i] - t[i]).powi(2);
        }
    }
    let rmse = sq.map(|s| (s / steps as f64).sqrt());
    let coverage = summary
        .bands
        .iter()
        .map(|band| {
            let mut inside = [0usize; 4];
            for (k, t) in truth.iter().enumerate() {
                let t = t.to_array();
                for i in 0..4 {
                    if band.lower[k][i] <= t[i] && t[i] <= band.upper[k][i] {
                        inside[i] += 1;
                    }
                }
            }
            LevelCoverage {
                level: band.level,
                coverage: inside.map(|c| c as f64 / steps as f64),
            }
        })
        .collect();
    Ok(ForecastMetrics { rmse, coverage })
}

fn level_tag(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// Long-format forecast table, one row per state per step:
/// `step,time_s,state,mean,lo<L>,hi<L>...[,truth]`.
pub fn write_forecast_csv(
    path: impl AsRef<Path>,
    summary: &ForecastSummary,
    start_step: usize,
    period_s: f64,
    truth: Option<&[GreenhouseState]>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(t) = truth {
        if t.len() != summary.mean.len() {
            return Err(Error::LengthMismatch {
                expected: summary.mean.len(),
                actual: t.len(),
            });
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "time_s".into(), "state".into(), "mean".into()];
    for b in &summary.bands {
        let tag = level_tag(b.level);
        header.push(format!("lo{tag}"));
        header.push(format!("hi{tag}"));
    }
    if truth.is_some() {
        header.push("truth".into());
    }
    w.write_record(&header)?;
    for (k, mean) in summary.mean.iter().enumerate() {
        let step = start_step + k;
        for s in 0..4 {
            let mut rec = vec![
                step.to_string(),
                fmt_f64(step as f64 * period_s),
                format!("x{}", s + 1),
                fmt_f64(mean[s]),
            ];
            for b in &summary.bands {
                rec.push(fmt_f64(b.lower[k][s]));
                rec.push(fmt_f64(b.upper[k][s]));
            }
            if let Some(t) = truth {
                rec.push(fmt_f64(t[k].to_array()[s]));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
