//! Derivative targets, z-score statistics and the training matrices.
//!
//! Feature rows are `(x̄(k), ū(k), d̄(k))` and target rows are the
//! normalized forward difference `(x(k+1) - x(k)) / h`, for `k = 0..N-1`
//! of every scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Scenario;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_json};
use crate::physics::{ControlInput, Disturbance, GreenhouseState, StateDerivative};

pub const STD_FLOOR: f64 = 1e-8;
pub const FEATURE_DIM: usize = 11;
pub const TARGET_DIM: usize = 4;

pub fn fd_target(x_k: &GreenhouseState, x_k1: &GreenhouseState, h: f64) -> StateDerivative {
    let a = x_k.to_array();
    let b = x_k1.to_array();
    StateDerivative(std::array::from_fn(|i| (b[i] - a[i]) / h))
}

pub fn normalize<const N: usize>(v: &[f64; N], mean: &[f64; N], std: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| (v[i] - mean[i]) / std[i])
}

pub fn denormalize<const N: usize>(v: &[f64; N], mean: &[f64; N], std: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| v[i] * std[i] + mean[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean_x: [f64; 4],
    pub std_x: [f64; 4],
    pub mean_u: [f64; 3],
    pub std_u: [f64; 3],
    pub mean_d: [f64; 4],
    pub std_d: [f64; 4],
    pub mean_dx: [f64; 4],
    pub std_dx: [f64; 4],
}

impl NormStats {
    /// Statistics that leave every channel unchanged.
    pub fn identity() -> Self {
        Self {
            mean_x: [0.0; 4],
            std_x: [1.0; 4],
            mean_u: [0.0; 3],
            std_u: [1.0; 3],
            mean_d: [0.0; 4],
            std_d: [1.0; 4],
            mean_dx: [0.0; 4],
            std_dx: [1.0; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = self
            .std_x
            .iter()
            .chain(&self.std_u)
            .chain(&self.std_d)
            .chain(&self.std_dx);
        let means = self
            .mean_x
            .iter()
            .chain(&self.mean_u)
            .chain(&self.mean_d)
            .chain(&self.mean_dx);
        if stds.clone().any(|s| !(s.is_finite() && *s >= STD_FLOOR)) || means.clone().any(|m| !m.is_finite()) {
            return Err(Error::SchemaMismatch("normalization statistics invalid".into()));
        }
        Ok(())
    }

    /// Normalized feature row `(x̄, ū, d̄)`.
    pub fn feature_row(&self, x: &GreenhouseState, u: &ControlInput, d: &Disturbance) -> [f64; FEATURE_DIM] {
        let xn = normalize(&x.to_array(), &self.mean_x, &self.std_x);
        let un = normalize(&u.to_array(), &self.mean_u, &self.std_u);
        let dn = normalize(&d.to_array(), &self.mean_d, &self.std_d);
        let mut row = [0.0; FEATURE_DIM];
        row[..4].copy_from_slice(&xn);
        row[4..7].copy_from_slice(&un);
        row[7..].copy_from_slice(&dn);
        row
    }

    pub fn normalize_derivative(&self, dx: &StateDerivative) -> [f64; 4] {
        normalize(&dx.0, &self.mean_dx, &self.std_dx)
    }

    pub fn denormalize_derivative(&self, dx_bar: &[f64; 4]) -> StateDerivative {
        StateDerivative(denormalize(dx_bar, &self.mean_dx, &self.std_dx))
    }

    pub fn normalize_state(&self, x: &GreenhouseState) -> [f64; 4] {
        normalize(&x.to_array(), &self.mean_x, &self.std_x)
    }

    pub fn denormalize_state(&self, x_bar: &[f64; 4]) -> GreenhouseState {
        GreenhouseState::from_array(denormalize(x_bar, &self.mean_x, &self.std_x))
    }
}

/// Sample mean and Bessel-corrected standard deviation (floored) per channel.
fn channel_stats<const N: usize>(rows: &[[f64; N]]) -> ([f64; N], [f64; N]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; N];
    for r in rows {
        for i in 0..N {
            mean[i] += r[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    // one refinement pass removes the rounding error of the naive sum, so a
    // constant channel gets its value back exactly
    let mut corr = [0.0; N];
    for r in rows {
        for i in 0..N {
            corr[i] += r[i] - mean[i];
        }
    }
    for i in 0..N {
        mean[i] += corr[i] / n;
    }
    let mut var = [0.0; N];
    for r in rows {
        for i in 0..N {
            let c = r[i] - mean[i];
            var[i] += c * c;
        }
    }
    let std = var.map(|v| (v / (n - 1.0)).sqrt().max(STD_FLOOR));
    (mean, std)
}

fn check_scenario(s: &Scenario, h: f64) -> Result<()> {
    if s.states.len() != s.steps() + 1 || s.disturbances.len() != s.steps() {
        return Err(Error::Scenario {
            index: s.index,
            source: Box::new(Error::LengthMismatch {
                expected: s.steps() + 1,
                actual: s.states.len(),
            }),
        });
    }
    if (s.period_s - h).abs() > 1e-9 * h {
        return Err(Error::InvalidArgument(format!(
            "scenario {} period {} s differs from h = {h} s",
            s.index, s.period_s
        )));
    }
    Ok(())
}

pub fn compute_stats(scenarios: &[Scenario], h: f64) -> Result<NormStats> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h must be > 0, got {h}")));
    }
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut ds = Vec::new();
    let mut dxs = Vec::new();
    for s in scenarios {
        check_scenario(s, h)?;
        for k in 0..s.steps() {
            xs.push(s.states[k].to_array());
            us.push(s.controls[k].to_array());
            ds.push(s.disturbances[k].to_array());
            dxs.push(fd_target(&s.states[k], &s.states[k + 1], h).0);
        }
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 usable steps, have {}",
            xs.len()
        )));
    }
    let (mean_x, std_x) = channel_stats(&xs);
    let (mean_u, std_u) = channel_stats(&us);
    let (mean_d, std_d) = channel_stats(&ds);
    let (mean_dx, std_dx) = channel_stats(&dxs);
    Ok(NormStats {
        mean_x,
        std_x,
        mean_u,
        std_u,
        mean_d,
        std_d,
        mean_dx,
        std_dx,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub targets: Vec<[f64; TARGET_DIM]>,
    pub stats: NormStats,
    /// `(scenario index, step k)` of each row.
    pub row_index: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.len()
    }

    /// Writes `features.csv`, `targets.csv` and `stats.json` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
        w.write_record([
            "scenario", "step", "x1", "x2", "x3", "x4", "u1", "u2", "u3", "d1", "d2", "d3", "d4",
        ])?;
        for ((j, k), row) in self.row_index.iter().zip(&self.features) {
            let mut rec = vec![j.to_string(), k.to_string()];
            rec.extend(row.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(dir.join("features.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("targets.csv"))?;
        w.write_record(["scenario", "step", "dx1", "dx2", "dx3", "dx4"])?;
        for ((j, k), row) in self.row_index.iter().zip(&self.targets) {
            let mut rec = vec![j.to_string(), k.to_string()];
            rec.extend(row.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(dir.join("targets.csv"), e))?;

        write_json(dir.join("stats.json"), &self.stats)
    }
}

pub fn build_matrices(scenarios: &[Scenario], stats: &NormStats, h: f64) -> Result<Dataset> {
    if scenarios.is_empty() {
        return Err(Error::InsufficientData("no scenarios".into()));
    }
    stats.validate()?;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut row_index = Vec::new();
    for s in scenarios {
        check_scenario(s, h)?;
        for k in 0..s.steps() {
            features.push(stats.feature_row(&s.states[k], &s.controls[k], &s.disturbances[k]));
            let dx = fd_target(&s.states[k], &s.states[k + 1], h);
            targets.push(stats.normalize_derivative(&dx));
            row_index.push((s.index, k));
        }
    }
    if features.is_empty() {
        return Err(Error::InsufficientData("scenarios have no steps".into()));
    }
    Ok(Dataset {
        features,
        targets,
        stats: stats.clone(),
        row_index,
    })
}
