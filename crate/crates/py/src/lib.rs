//! Python bindings for `lettuce_bnode`.
//!
//! States, controls and disturbances cross the boundary as plain float
//! sequences in the same order as the Rust `to_array` methods. Structured
//! configs (weather profile, network layout, training config, run config)
//! are passed as JSON strings using the same schema as the CLI config file.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lettuce_bnode::bnn::{self, NetLayout};
use lettuce_bnode::config::RunConfig;
use lettuce_bnode::datagen::{self, WeatherSource};
use lettuce_bnode::dataset::{self, FEATURE_DIM};
use lettuce_bnode::forecast::{self, BandKind, RolloutSpace};
use lettuce_bnode::physics::{self, ControlInput, Disturbance, GreenhouseState, ModelParameters};
use lettuce_bnode::trainer::{self, TrainConfig};
use lettuce_bnode::weather::{self, WeatherProfile};

create_exception!(lettuce_bnode_py, LettuceError, PyException);

fn py_err(e: lettuce_bnode::Error) -> PyErr {
    LettuceError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    LettuceError::new_err(format!("invalid JSON: {e}"))
}

fn params(p: Option<Vec<f64>>) -> PyResult<ModelParameters> {
    match p {
        None => Ok(ModelParameters::table2()),
        Some(v) => {
            let arr: [f64; 28] = v
                .try_into()
                .map_err(|v: Vec<f64>| LettuceError::new_err(format!("expected 28 parameters, got {}", v.len())))?;
            let p = ModelParameters(arr);
            p.validate().map_err(py_err)?;
            Ok(p)
        }
    }
}

fn states(v: &[GreenhouseState]) -> Vec<[f64; 4]> {
    v.iter().map(|x| x.to_array()).collect()
}

fn controls(v: Vec<[f64; 3]>) -> Vec<ControlInput> {
    v.into_iter().map(ControlInput::from_array).collect()
}

fn disturbances(v: Vec<[f64; 4]>) -> Vec<Disturbance> {
    v.into_iter().map(Disturbance::from_array).collect()
}

/// The 28 default model parameters.
#[pyfunction]
fn default_parameters() -> Vec<f64> {
    ModelParameters::table2().0.to_vec()
}

/// Seed for `stream` derived from `root`.
#[pyfunction]
fn derive_seed(root: u64, stream: u64) -> u64 {
    lettuce_bnode::derive_seed(root, stream)
}

/// Continuous-time state derivative `dx/dt`.
#[pyfunction]
#[pyo3(signature = (x, u, d, params=None))]
fn derivatives(x: [f64; 4], u: [f64; 3], d: [f64; 4], params: Option<Vec<f64>>) -> PyResult<[f64; 4]> {
    let p = self::params(params)?;
    physics::derivatives(
        &GreenhouseState::from_array(x),
        &ControlInput::from_array(u),
        &Disturbance::from_array(d),
        &p,
    )
    .map(|dx| dx.0)
    .map_err(py_err)
}

/// Photosynthesis, ventilation and transpiration fluxes as a dict.
#[pyfunction]
#[pyo3(signature = (x, u, d, params=None))]
fn canopy_fluxes<'py>(
    py: Python<'py>,
    x: [f64; 4],
    u: [f64; 3],
    d: [f64; 4],
    params: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = self::params(params)?;
    let f = physics::canopy_fluxes(
        &GreenhouseState::from_array(x),
        &ControlInput::from_array(u),
        &Disturbance::from_array(d),
        &p,
    )
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("phot", f.phot)?;
    out.set_item("vent_co2", f.vent_co2)?;
    out.set_item("transp", f.transp)?;
    out.set_item("vent_h2o", f.vent_h2o)?;
    out.set_item("phi_denom", f.phi_denom)?;
    Ok(out)
}

/// One RK4 step of `h` seconds.
#[pyfunction]
#[pyo3(signature = (x, u, d, h, params=None))]
fn rk4_step(x: [f64; 4], u: [f64; 3], d: [f64; 4], h: f64, params: Option<Vec<f64>>) -> PyResult<[f64; 4]> {
    let p = self::params(params)?;
    physics::rk4_step(
        &GreenhouseState::from_array(x),
        &ControlInput::from_array(u),
        &Disturbance::from_array(d),
        &p,
        h,
    )
    .map(|x| x.to_array())
    .map_err(py_err)
}

/// Trajectory of `len(u_seq) + 1` states starting at `x0`.
#[pyfunction]
#[pyo3(signature = (x0, u_seq, d_seq, h, params=None))]
fn simulate(
    x0: [f64; 4],
    u_seq: Vec<[f64; 3]>,
    d_seq: Vec<[f64; 4]>,
    h: f64,
    params: Option<Vec<f64>>,
) -> PyResult<Vec<[f64; 4]>> {
    let p = self::params(params)?;
    physics::simulate(
        &GreenhouseState::from_array(x0),
        &controls(u_seq),
        &disturbances(d_seq),
        &p,
        h,
    )
    .map(|t| states(&t))
    .map_err(py_err)
}

/// Weather-driven controller: disturbance -> control.
#[pyfunction]
fn control_policy(d: [f64; 4]) -> [f64; 3] {
    datagen::control_policy(&Disturbance::from_array(d)).to_array()
}

/// Synthetic disturbance series of `days * 86400 / period_s` samples.
#[pyfunction]
#[pyo3(signature = (days, period_s, seed, profile_json=None))]
fn synth_weather(days: u32, period_s: u32, seed: u64, profile_json: Option<&str>) -> PyResult<Vec<[f64; 4]>> {
    let profile = match profile_json {
        Some(s) => serde_json::from_str::<WeatherProfile>(s).map_err(json_err)?,
        None => WeatherProfile::default(),
    };
    let series = weather::synth_weather(days, period_s, seed, &profile).map_err(py_err)?;
    Ok(series.samples.iter().map(|d| d.to_array()).collect())
}

/// A simulated scenario: states, controls and disturbances.
#[pyclass(name = "Scenario", module = "lettuce_bnode_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: datagen::Scenario,
}

#[pymethods]
impl PyScenario {
    #[getter]
    fn index(&self) -> usize {
        self.inner.index
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn period_s(&self) -> f64 {
        self.inner.period_s
    }

    #[getter]
    fn states(&self) -> Vec<[f64; 4]> {
        states(&self.inner.states)
    }

    #[getter]
    fn controls(&self) -> Vec<[f64; 3]> {
        self.inner.controls.iter().map(|u| u.to_array()).collect()
    }

    #[getter]
    fn disturbances(&self) -> Vec<[f64; 4]> {
        self.inner.disturbances.iter().map(|d| d.to_array()).collect()
    }

    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn __len__(&self) -> usize {
        self.inner.steps()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(index={}, steps={})", self.inner.index, self.inner.steps())
    }
}

/// Scenarios `0..n` under synthetic weather and the default controller.
#[pyfunction]
#[pyo3(signature = (n, days, period_s, seed, x0=None, params=None))]
fn generate_scenarios(
    py: Python<'_>,
    n: usize,
    days: u32,
    period_s: u32,
    seed: u64,
    x0: Option<[f64; 4]>,
    params: Option<Vec<f64>>,
) -> PyResult<Vec<PyScenario>> {
    let p = self::params(params)?;
    let x0 = x0.map_or(GreenhouseState::INITIAL, GreenhouseState::from_array);
    let source = WeatherSource::Synthetic(WeatherProfile::default());
    let out = py
        .detach(|| datagen::generate_scenarios(n, days, period_s, seed, &p, &x0, &source))
        .map_err(py_err)?;
    Ok(out.into_iter().map(|inner| PyScenario { inner }).collect())
}

/// Normalized training matrices with their normalization statistics.
#[pyclass(name = "Dataset", module = "lettuce_bnode_py", frozen)]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Pools statistics over `scenarios` and builds the matrices.
    #[staticmethod]
    fn from_scenarios(scenarios: Vec<PyRef<'_, PyScenario>>) -> PyResult<Self> {
        let scenarios: Vec<datagen::Scenario> = scenarios.iter().map(|s| s.inner.clone()).collect();
        let h = scenarios
            .first()
            .map(|s| s.period_s)
            .ok_or_else(|| LettuceError::new_err("no scenarios"))?;
        let stats = dataset::compute_stats(&scenarios, h).map_err(py_err)?;
        let inner = dataset::build_matrices(&scenarios, &stats, h).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn features(&self) -> Vec<[f64; FEATURE_DIM]> {
        self.inner.features.clone()
    }

    #[getter]
    fn targets(&self) -> Vec<[f64; 4]> {
        self.inner.targets.clone()
    }

    /// Normalization statistics as JSON.
    fn stats_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.stats).map_err(json_err)
    }

    fn export(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.export(dir).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.rows()
    }
}

/// Mean-field Gaussian MLP.
#[pyclass(name = "BayesianMLP", module = "lettuce_bnode_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBayesianMLP {
    inner: bnn::BayesianMLP,
}

#[pymethods]
impl PyBayesianMLP {
    #[new]
    #[pyo3(signature = (seed=0, init_sigma=0.05, layout_json=None))]
    fn new(seed: u64, init_sigma: f64, layout_json: Option<&str>) -> PyResult<Self> {
        let layout = match layout_json {
            Some(s) => serde_json::from_str::<NetLayout>(s).map_err(json_err)?,
            None => NetLayout::default(),
        };
        let inner = bnn::BayesianMLP::init(&layout, seed, init_sigma).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        let inner: bnn::BayesianMLP = serde_json::from_str(s).map_err(json_err)?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Loads the network stored in a training checkpoint.
    #[staticmethod]
    fn from_checkpoint(path: PathBuf) -> PyResult<Self> {
        let ckpt = trainer::load_checkpoint(path).map_err(py_err)?;
        Ok(Self { inner: ckpt.network() })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    #[getter]
    fn active_params(&self) -> usize {
        self.inner.active_params()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu.clone()
    }

    #[getter]
    fn rho(&self) -> Vec<f64> {
        self.inner.rho.clone()
    }

    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.mask.clone()
    }

    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma()
    }

    /// Output of the network at the posterior mean.
    fn forward_mean(&self, feature: Vec<f64>) -> PyResult<Vec<f64>> {
        if feature.len() != self.inner.layout.input_dim {
            return Err(LettuceError::new_err(format!(
                "expected {} features, got {}",
                self.inner.layout.input_dim,
                feature.len()
            )));
        }
        Ok(bnn::forward(&self.inner.mean_values(), &self.inner.layout, &feature))
    }

    /// Output of the network under the posterior draw for `seed`.
    fn forward_sample(&self, feature: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        if feature.len() != self.inner.layout.input_dim {
            return Err(LettuceError::new_err(format!(
                "expected {} features, got {}",
                self.inner.layout.input_dim,
                feature.len()
            )));
        }
        let sample = self.inner.sample_params(seed);
        Ok(bnn::forward(&sample.values, &self.inner.layout, &feature))
    }

    /// Copy with low signal-to-noise parameters masked out.
    fn pruned(&self, threshold: f64) -> Self {
        Self {
            inner: bnn::snr_prune(&self.inner, threshold),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "BayesianMLP(n_params={}, active={})",
            self.inner.n_params(),
            self.inner.active_params()
        )
    }
}

/// Trains a copy of `net`; returns `(trained, history)` where each history
/// entry is a dict with `epoch`, `total_loss`, `data_loss`, `penalty` and
/// `active_params`.
#[pyfunction]
#[pyo3(signature = (net, data, config_json=None))]
fn train<'py>(
    py: Python<'py>,
    net: PyRef<'py, PyBayesianMLP>,
    data: PyRef<'py, PyDataset>,
    config_json: Option<&str>,
) -> PyResult<(PyBayesianMLP, Vec<Bound<'py, PyDict>>)> {
    let config = match config_json {
        Some(s) => serde_json::from_str::<TrainConfig>(s).map_err(json_err)?,
        None => TrainConfig::default(),
    };
    let (net_inner, data_inner) = (&net.inner, &data.inner);
    let (trained, history) = py
        .detach(|| trainer::train(net_inner, data_inner, &config))
        .map_err(py_err)?;
    let records = history
        .epochs
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("total_loss", r.total_loss)?;
            d.set_item("data_loss", r.data_loss)?;
            d.set_item("penalty", r.penalty)?;
            d.set_item("active_params", r.active_params)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyBayesianMLP { inner: trained }, records))
}

/// Ensemble forecast from `x0` under known inputs. Returns a dict with
/// `mean`, `bands` (level -> (lower, upper)) and `trajectories`.
#[pyfunction(name = "forecast")]
#[pyo3(signature = (net, data, x0, u_seq, d_seq, h, n_samples=100, seed=0, levels=vec![0.9, 0.99], band="empirical"))]
#[allow(clippy::too_many_arguments)]
fn forecast_ensemble<'py>(
    py: Python<'py>,
    net: PyRef<'py, PyBayesianMLP>,
    data: PyRef<'py, PyDataset>,
    x0: [f64; 4],
    u_seq: Vec<[f64; 3]>,
    d_seq: Vec<[f64; 4]>,
    h: f64,
    n_samples: usize,
    seed: u64,
    levels: Vec<f64>,
    band: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match band {
        "empirical" => BandKind::Empirical,
        "gaussian" => BandKind::Gaussian,
        other => return Err(LettuceError::new_err(format!("unknown band kind {other:?}"))),
    };
    let (u_seq, d_seq) = (controls(u_seq), disturbances(d_seq));
    let x0 = GreenhouseState::from_array(x0);
    let (net_inner, stats) = (&net.inner, &data.inner.stats);
    let (ensemble, summary) = py
        .detach(|| {
            let ens = forecast::ensemble_forecast(
                net_inner,
                stats,
                &x0,
                &u_seq,
                &d_seq,
                n_samples,
                h,
                seed,
                RolloutSpace::Physical,
            )?;
            let summary = forecast::summarize(&ens, &levels, kind)?;
            Ok((ens, summary))
        })
        .map_err(py_err)?;

    let out = PyDict::new(py);
    out.set_item("mean", summary.mean)?;
    let bands = PyDict::new(py);
    for b in summary.bands {
        bands.set_item(b.level, (b.lower, b.upper))?;
    }
    out.set_item("bands", bands)?;
    let trajectories: Vec<Vec<[f64; 4]>> = ensemble.trajectories.iter().map(|t| states(t)).collect();
    out.set_item("trajectories", trajectories)?;
    Ok(out)
}

/// Full train + forecast pipeline; writes all artifacts to `out_dir` and
/// returns the metrics report as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, config_json=None))]
fn evaluate(py: Python<'_>, out_dir: PathBuf, config_json: Option<&str>) -> PyResult<String> {
    let mut cfg = match config_json {
        Some(s) => serde_json::from_str::<RunConfig>(s).map_err(json_err)?,
        None => RunConfig::default(),
    };
    cfg.output_dir = out_dir.clone();
    cfg.validate().map_err(py_err)?;
    let outcome = py
        .detach(|| lettuce_bnode::cli::cmd_evaluate(&cfg, &out_dir))
        .map_err(py_err)?;
    serde_json::to_string(&outcome.forecast.report).map_err(json_err)
}

#[pymodule]
fn lettuce_bnode_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LettuceError", m.py().get_type::<LettuceError>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBayesianMLP>()?;
    m.add_function(wrap_pyfunction!(default_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(derivatives, m)?)?;
    m.add_function(wrap_pyfunction!(canopy_fluxes, m)?)?;
    m.add_function(wrap_pyfunction!(rk4_step, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(control_policy, m)?)?;
    m.add_function(wrap_pyfunction!(synth_weather, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
