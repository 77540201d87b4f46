//! The four pipeline commands. Each is a pure function of the run
//! configuration (and, for `forecast`, the checkpoint file), so reruns
//! produce byte-identical artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bnn::BayesianMLP;
use crate::config::RunConfig;
use crate::datagen::{generate_scenario, generate_scenarios, Scenario};
use crate::dataset::{build_matrices, compute_stats, Dataset, NormStats};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::forecast::{ensemble_forecast, score, summarize, write_forecast_csv, ForecastMetrics, ForecastSummary};
use crate::io::{json_hash, write_json, write_trajectory_csv};
use crate::physics::GreenhouseState;
use crate::trainer::{load_checkpoint_for, save_checkpoint, train, TrainHistory};

const STREAM_FORECAST: u64 = 0xf0ca;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// SHA-256 of the configuration, excluding the output directory so that
/// identical runs into different directories share a hash.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.output_dir = PathBuf::new();
    json_hash(&cfg)
}

/// Seed used for the ensemble draws of a run.
pub fn forecast_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, STREAM_FORECAST)
}

/// The training scenarios `0..n_scenarios`, each `days_train` days long.
pub fn training_scenarios(cfg: &RunConfig) -> Result<Vec<Scenario>> {
    cfg.validate()?;
    generate_scenarios(
        cfg.n_scenarios,
        cfg.days_train,
        cfg.period_s,
        cfg.seed,
        &cfg.parameters.resolve()?,
        &GreenhouseState::INITIAL,
        &cfg.weather_source()?,
    )
}

/// The held-out scenario (index `n_scenarios`) spanning training and
/// forecast days; never used for training.
pub fn holdout_scenario(cfg: &RunConfig) -> Result<Scenario> {
    cfg.validate()?;
    generate_scenario(
        cfg.n_scenarios,
        cfg.days_train + cfg.days_forecast,
        cfg.period_s,
        cfg.seed,
        &cfg.parameters.resolve()?,
        &GreenhouseState::INITIAL,
        &cfg.weather_source()?,
    )
}

#[derive(Debug, Serialize)]
struct Manifest {
    n_scenarios: usize,
    days: u32,
    period_s: u32,
    root_seed: u64,
    seeds: Vec<u64>,
    files: Vec<String>,
    parameter_hash: String,
    weather_source: String,
    config_hash: String,
}

/// Writes one trajectory CSV per training scenario plus a manifest into
/// `<out>/scenarios`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<Scenario>> {
    let scenarios = training_scenarios(cfg)?;
    let dir = out.join("scenarios");
    ensure_dir(&dir)?;
    let mut files = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let name = format!("scenario_{:03}.csv", s.index);
        write_trajectory_csv(dir.join(&name), s)?;
        files.push(name);
    }
    let manifest = Manifest {
        n_scenarios: cfg.n_scenarios,
        days: cfg.days_train,
        period_s: cfg.period_s,
        root_seed: cfg.seed,
        seeds: scenarios.iter().map(|s| s.seed).collect(),
        files,
        parameter_hash: json_hash(&cfg.parameters.resolve()?)?,
        weather_source: match &cfg.weather {
            crate::config::WeatherConfig::Synthetic(_) => "synthetic".into(),
            crate::config::WeatherConfig::Csv(p) => p.display().to_string(),
        },
        config_hash: config_hash(cfg)?,
    };
    write_json(dir.join(MANIFEST_FILE), &manifest)?;
    Ok(scenarios)
}

pub struct TrainOutcome {
    pub net: BayesianMLP,
    pub history: TrainHistory,
    pub dataset: Dataset,
    pub checkpoint: PathBuf,
}

/// Builds the training matrices, trains, and writes
/// `checkpoint.json`, `history.csv` and `dataset/`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let scenarios = training_scenarios(cfg)?;
    let h = cfg.period_s as f64;
    let stats = compute_stats(&scenarios, h)?;
    let dataset = build_matrices(&scenarios, &stats, h)?;
    ensure_dir(out)?;
    dataset.export(out.join("dataset"))?;

    let init = cfg.train.init_network()?;
    let (net, history) = train(&init, &dataset, &cfg.train)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &net, &stats, &cfg.train, &config_hash(cfg)?)?;
    history.write_csv(out.join(HISTORY_FILE))?;
    Ok(TrainOutcome {
        net,
        history,
        dataset,
        checkpoint,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub start_step: usize,
    pub horizon_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub band: crate::forecast::BandKind,
    pub rmse: [f64; 4],
    pub rmse_normalized: [f64; 4],
    /// Keyed by confidence level, e.g. `"0.99"`.
    pub coverage: BTreeMap<String, [f64; 4]>,
}

pub struct ForecastOutcome {
    pub summary: ForecastSummary,
    pub metrics: ForecastMetrics,
    pub report: MetricsReport,
    pub truth: Vec<GreenhouseState>,
    pub stats: NormStats,
}

/// Forecasts the held-out scenario from the end of the training days and
/// scores it against the true continuation. Writes `forecast.csv` and
/// `metrics.json`.
pub fn cmd_forecast(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<ForecastOutcome> {
    cfg.validate()?;
    let ckpt = load_checkpoint_for(checkpoint, &cfg.train.layout)?;
    let net = ckpt.network();
    let stats = ckpt.stats.clone();

    let holdout = holdout_scenario(cfg)?;
    let start = cfg.days_train as usize * cfg.steps_per_day();
    let horizon = cfg.days_forecast as usize * cfg.steps_per_day();
    let window = holdout.window(start, horizon)?;
    let h = cfg.period_s as f64;

    let seed = forecast_seed(cfg);
    let mut ensemble = ensemble_forecast(
        &net,
        &stats,
        &window.states[0],
        &window.controls,
        &window.disturbances,
        cfg.forecast.n_samples,
        h,
        seed,
        cfg.forecast.rollout_space,
    )?;
    ensemble.start_step = start;
    let summary = summarize(&ensemble, &cfg.forecast.levels, cfg.forecast.band)?;
    let metrics = score(&summary, &window.states)?;

    ensure_dir(out)?;
    write_forecast_csv(out.join(FORECAST_FILE), &summary, start, h, Some(&window.states))?;
    let report = MetricsReport {
        start_step: start,
        horizon_steps: horizon,
        n_samples: cfg.forecast.n_samples,
        seed,
        band: cfg.forecast.band,
        rmse: metrics.rmse,
        rmse_normalized: metrics.normalized_rmse(&stats),
        coverage: metrics
            .coverage
            .iter()
            .map(|c| (format!("{}", c.level), c.coverage))
            .collect(),
    };
    write_json(out.join(METRICS_FILE), &report)?;
    Ok(ForecastOutcome {
        summary,
        metrics,
        report,
        truth: window.states,
        stats,
    })
}

#[derive(Debug, Serialize)]
struct TrainingReport {
    epochs: usize,
    first_epoch_data_loss: f64,
    final_epoch_data_loss: f64,
    loss_ratio: f64,
    final_penalty: f64,
    active_params: usize,
    total_params: usize,
}

#[derive(Debug, Serialize)]
struct Seeds {
    root: u64,
    train: u64,
    forecast: u64,
    scenarios: Vec<u64>,
    holdout_scenario: u64,
}

#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    config_hash: String,
    seeds: Seeds,
    training: TrainingReport,
    forecast: MetricsReport,
}

pub struct EvaluateOutcome {
    pub train: TrainOutcome,
    pub forecast: ForecastOutcome,
}

/// End-to-end run: train, forecast, and aggregate everything into
/// `report.json`.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<EvaluateOutcome> {
    let trained = cmd_train(cfg, out)?;
    let forecast = cmd_forecast(cfg, &trained.checkpoint, out)?;

    let hist = &trained.history.epochs;
    let (first, last) = match (hist.first(), hist.last()) {
        (Some(f), Some(l)) => (f.data_loss, l.data_loss),
        _ => (f64::NAN, f64::NAN),
    };
    let scenario_seeds = (0..cfg.n_scenarios as u64).map(|j| derive_seed(cfg.seed, j)).collect();
    let report = EvaluationReport {
        config_hash: config_hash(cfg)?,
        seeds: Seeds {
            root: cfg.seed,
            train: cfg.train.seed,
            forecast: forecast_seed(cfg),
            scenarios: scenario_seeds,
            holdout_scenario: derive_seed(cfg.seed, cfg.n_scenarios as u64),
        },
        training: TrainingReport {
            epochs: hist.len(),
            first_epoch_data_loss: first,
            final_epoch_data_loss: last,
            loss_ratio: last / first,
            final_penalty: hist.last().map_or(0.0, |r| r.penalty),
            active_params: trained.net.active_params(),
            total_params: trained.net.n_params(),
        },
        forecast: forecast.report.clone(),
    };
    write_json(out.join(REPORT_FILE), &report)?;
    Ok(EvaluateOutcome {
        train: trained,
        forecast,
    })
}
