//! CSV/JSON artifact helpers shared by the pipeline stages.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datagen::Scenario;
use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn json_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub const TRAJECTORY_HEADER: [&str; 13] = [
    "step", "time_s", "x1", "x2", "x3", "x4", "u1", "u2", "u3", "d1", "d2", "d3", "d4",
];

/// One row per state; the final row has no input and leaves those cells empty.
pub fn write_trajectory_csv(path: impl AsRef<Path>, scenario: &Scenario) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for (k, x) in scenario.states.iter().enumerate() {
        let mut rec = Vec::with_capacity(13);
        rec.push(k.to_string());
        rec.push(fmt_f64(k as f64 * scenario.period_s));
        rec.extend(x.to_array().iter().map(|&v| fmt_f64(v)));
        match (scenario.controls.get(k), scenario.disturbances.get(k)) {
            (Some(u), Some(d)) => {
                rec.extend(u.to_array().iter().map(|&v| fmt_f64(v)));
                rec.extend(d.to_array().iter().map(|&v| fmt_f64(v)));
            }
            _ => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
