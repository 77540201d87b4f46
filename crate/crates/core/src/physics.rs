//! Lettuce greenhouse model: four states (crop dry weight, indoor CO2,
//! indoor temperature, indoor humidity) driven by three actuators and four
//! weather disturbances.
//!
//! Time is in seconds throughout. Inputs are held constant over an
//! integration step (zero-order hold).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude the photosynthesis denominator is treated as zero.
pub const PHI_GUARD: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenhouseState {
    /// kg/m²
    pub dry_weight: f64,
    /// kg/m³
    pub indoor_co2: f64,
    /// °C
    pub indoor_temp: f64,
    /// kg/m³
    pub indoor_humidity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// mg/m²/s
    pub co2_injection: f64,
    /// mm/s
    pub ventilation: f64,
    /// W/m²
    pub heating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// W/m²
    pub radiation: f64,
    /// kg/m³
    pub outdoor_co2: f64,
    /// °C
    pub outdoor_temp: f64,
    /// kg/m³
    pub outdoor_humidity: f64,
}

/// Time derivative of a [`GreenhouseState`], per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDerivative(pub [f64; 4]);

impl GreenhouseState {
    pub const DIM: usize = 4;

    /// Initial condition used for every generated scenario.
    pub const INITIAL: GreenhouseState = GreenhouseState {
        dry_weight: 0.0035,
        indoor_co2: 0.001,
        indoor_temp: 15.0,
        indoor_humidity: 0.008,
    };

    pub fn new(dry_weight: f64, indoor_co2: f64, indoor_temp: f64, indoor_humidity: f64) -> Self {
        Self {
            dry_weight,
            indoor_co2,
            indoor_temp,
            indoor_humidity,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dry_weight, self.indoor_co2, self.indoor_temp, self.indoor_humidity]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Checks the physical invariants; returns a description of the first violation.
    pub fn check(&self) -> Option<String> {
        if !self.is_finite() {
            return Some(format!("non-finite component in {:?}", self.to_array()));
        }
        if self.dry_weight < 0.0 {
            return Some(format!("negative dry weight {}", self.dry_weight));
        }
        if self.indoor_co2 < 0.0 {
            return Some(format!("negative indoor CO2 {}", self.indoor_co2));
        }
        if self.indoor_humidity < 0.0 {
            return Some(format!("negative indoor humidity {}", self.indoor_humidity));
        }
        None
    }
}

impl ControlInput {
    pub const DIM: usize = 3;

    pub const ZERO: ControlInput = ControlInput {
        co2_injection: 0.0,
        ventilation: 0.0,
        heating: 0.0,
    };

    pub fn new(co2_injection: f64, ventilation: f64, heating: f64) -> Self {
        Self {
            co2_injection,
            ventilation,
            heating,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.co2_injection, self.ventilation, self.heating]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl Disturbance {
    pub const DIM: usize = 4;

    pub fn new(radiation: f64, outdoor_co2: f64, outdoor_temp: f64, outdoor_humidity: f64) -> Self {
        Self {
            radiation,
            outdoor_co2,
            outdoor_temp,
            outdoor_humidity,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [
            self.radiation,
            self.outdoor_co2,
            self.outdoor_temp,
            self.outdoor_humidity,
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.radiation >= 0.0
            && self.outdoor_co2 >= 0.0
            && self.outdoor_humidity >= 0.0
    }
}

/// The 28 model parameters, indexed from 1 via [`ModelParameters::p`].
///
/// Entries 12–15, 27 and 28 are carried for completeness but do not enter
/// the equations implemented here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParameters(pub [f64; 28]);

impl Default for ModelParameters {
    fn default() -> Self {
        Self::table2()
    }
}

impl ModelParameters {
    /// Reference lettuce/greenhouse parameter set.
    pub fn table2() -> Self {
        ModelParameters([
            0.544,    // p1
            2.65e-7,  // p2
            53.0,     // p3
            3.55e-9,  // p4
            5.11e-6,  // p5
            2.3e-4,   // p6
            6.29e-4,  // p7
            5.2e-5,   // p8
            4.1,      // p9
            4.87e-7,  // p10
            7.5e-6,   // p11
            8.31,     // p12
            273.15,   // p13
            101325.0, // p14
            0.044,    // p15
            3.0e4,    // p16
            1290.0,   // p17
            6.1,      // p18
            0.2,      // p19
            4.1,      // p20
            0.0036,   // p21
            9348.0,   // p22
            8314.0,   // p23
            273.15,   // p24
            17.4,     // p25
            239.0,    // p26
            17.269,   // p27
            238.3,    // p28
        ])
    }

    /// One-based accessor.
    #[inline]
    pub fn p(&self, i: usize) -> f64 {
        self.0[i - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("parameter p{} is not finite", i + 1)));
        }
        for i in [9, 16, 20] {
            if self.p(i) <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "parameter p{i} must be positive, got {}",
                    self.p(i)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanopyFluxes {
    /// Gross canopy photosynthesis, kg/m²/s.
    pub phot: f64,
    /// CO2 exchange through the vents, kg/m²/s.
    pub vent_co2: f64,
    /// Canopy transpiration, kg/m²/s.
    pub transp: f64,
    /// H2O exchange through the vents, kg/m²/s.
    pub vent_h2o: f64,
    /// Denominator of the photosynthesis rectangular hyperbola.
    pub phi_denom: f64,
}

pub fn canopy_fluxes(
    x: &GreenhouseState,
    u: &ControlInput,
    d: &Disturbance,
    p: &ModelParameters,
) -> Result<CanopyFluxes> {
    let x1 = x.dry_weight;
    let x2 = x.indoor_co2;
    let x3 = x.indoor_temp;
    let x4 = x.indoor_humidity;

    let light = p.p(4) * d.radiation;
    let co2_term = (-p.p(5) * x3 * x3 + p.p(6) * x3 - p.p(7)) * (x2 - p.p(8));
    let phi_denom = light + co2_term;
    if !(phi_denom.abs() >= PHI_GUARD) {
        return Err(Error::DegenerateDenominator { value: phi_denom });
    }
    let cover = 1.0 - (-p.p(3) * x1).exp();
    let phot = cover * (light * co2_term) / phi_denom;

    let vent_rate = u.ventilation * 1e-3 + p.p(11);
    let vent_co2 = vent_rate * (x2 - d.outdoor_co2);
    let saturation = p.p(22) / (p.p(23) * (x3 + p.p(24))) * (p.p(25) * x3 / (x3 + p.p(26))).exp();
    let transp = p.p(21) * cover * (saturation - x4);
    let vent_h2o = vent_rate * (x4 - d.outdoor_humidity);

    Ok(CanopyFluxes {
        phot,
        vent_co2,
        transp,
        vent_h2o,
        phi_denom,
    })
}

pub fn derivatives(
    x: &GreenhouseState,
    u: &ControlInput,
    d: &Disturbance,
    p: &ModelParameters,
) -> Result<StateDerivative> {
    let f = canopy_fluxes(x, u, d, p)?;
    let x1 = x.dry_weight;
    let x3 = x.indoor_temp;
    let respiration = x1 * 2f64.powf(x3 / 10.0 - 2.5);

    let dx1 = p.p(1) * f.phot - p.p(2) * respiration;
    let dx2 = (-f.phot + p.p(10) * respiration + u.co2_injection * 1e-6 - f.vent_co2) / p.p(9);
    let dx3 = (u.heating - (p.p(17) * u.ventilation * 1e-3 + p.p(18)) * (x3 - d.outdoor_temp) + p.p(19) * d.radiation)
        / p.p(16);
    let dx4 = (f.transp - f.vent_h2o) / p.p(20);
    Ok(StateDerivative([dx1, dx2, dx3, dx4]))
}

#[inline]
fn axpy(x: &[f64; 4], a: f64, k: &[f64; 4]) -> GreenhouseState {
    GreenhouseState::from_array([x[0] + a * k[0], x[1] + a * k[1], x[2] + a * k[2], x[3] + a * k[3]])
}

/// One classic fourth-order Runge–Kutta step of length `h` seconds.
pub fn rk4_step(
    x: &GreenhouseState,
    u: &ControlInput,
    d: &Disturbance,
    p: &ModelParameters,
    h: f64,
) -> Result<GreenhouseState> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step length must be >= 0, got {h}")));
    }
    if h == 0.0 {
        return Ok(*x);
    }
    let x0 = x.to_array();
    let k1 = derivatives(x, u, d, p)?.0;
    let k2 = derivatives(&axpy(&x0, 0.5 * h, &k1), u, d, p)?.0;
    let k3 = derivatives(&axpy(&x0, 0.5 * h, &k2), u, d, p)?.0;
    let k4 = derivatives(&axpy(&x0, h, &k3), u, d, p)?.0;

    let mut next = [0.0; 4];
    for i in 0..4 {
        next[i] = x0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = GreenhouseState::from_array(next);
    if let Some(detail) = next.check() {
        return Err(Error::NonFiniteState { step: 0, detail });
    }
    Ok(next)
}

/// Rolls the model forward over `u_seq.len()` steps. The returned trajectory
/// starts with `x0` and has one more entry than the input sequences.
pub fn simulate(
    x0: &GreenhouseState,
    u_seq: &[ControlInput],
    d_seq: &[Disturbance],
    p: &ModelParameters,
    h: f64,
) -> Result<Vec<GreenhouseState>> {
    if u_seq.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
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
        x = rk4_step(&x, u, d, p, h).map_err(|e| match e {
            Error::NonFiniteState { detail, .. } => Error::NonFiniteState { step: k, detail },
            other => other,
        })?;
        traj.push(x);
    }
    Ok(traj)
}
