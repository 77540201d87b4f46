//! Mini-batch Adam on the posterior means and spreads, with optional
//! periodic signal-to-noise pruning, plus JSON checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnn::{loss_and_grad, snr_prune, BayesianMLP, NetLayout, TrainingRows};
use crate::dataset::NormStats;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_json};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// seed streams
const STREAM_INIT: u64 = 0x1417;
const STREAM_SHUFFLE: u64 = 0x5a0f;
const STREAM_NOISE: u64 = 0x0c0d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layout: NetLayout,
    pub init_sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_mc: usize,
    pub sparsity_lambda: f64,
    pub prune_threshold: f64,
    /// Prune every this many epochs; 0 disables pruning.
    pub prune_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layout: NetLayout::default(),
            init_sigma: 0.05,
            epochs: 2000,
            batch_size: 256,
            learning_rate: 1e-2,
            n_mc: 3,
            sparsity_lambda: 1e-4,
            prune_threshold: 0.1,
            prune_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.batch_size == 0 || self.n_mc == 0 {
            return Err(Error::InvalidArgument("batch_size and n_mc must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.sparsity_lambda >= 0.0 && self.prune_threshold >= 0.0) {
            return Err(Error::InvalidArgument(
                "sparsity_lambda and prune_threshold must be >= 0".into(),
            ));
        }
        if !(self.init_sigma > 0.0) {
            return Err(Error::InvalidArgument("init_sigma must be > 0".into()));
        }
        Ok(())
    }

    /// A freshly initialized network for this configuration.
    pub fn init_network(&self) -> Result<BayesianMLP> {
        BayesianMLP::init(&self.layout, derive_seed(self.seed, STREAM_INIT), self.init_sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub active_params: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "total_loss", "data_loss", "penalty", "active_params"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                fmt_f64(r.total_loss),
                fmt_f64(r.data_loss),
                fmt_f64(r.penalty),
                r.active_params.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], mask: &[bool], lr: f64) {
        let t = self.t + 1;
        self.t = t;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            if !mask[i] {
                continue;
            }
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Trains `net` in place of a copy. Fully determined by `config.seed`.
pub fn train<D: TrainingRows + ?Sized>(
    net: &BayesianMLP,
    data: &D,
    config: &TrainConfig,
) -> Result<(BayesianMLP, TrainHistory)> {
    config.validate()?;
    net.validate()?;
    let mut net = net.clone();
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((net, history));
    }
    let rows = data.len();
    if rows < config.batch_size {
        return Err(Error::InsufficientData(format!(
            "{rows} rows cannot fill a batch of {}",
            config.batch_size
        )));
    }

    let n = net.n_params();
    let mut adam_mu = Adam::new(n);
    let mut adam_rho = Adam::new(n);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed ^ STREAM_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);

        let mut data_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let noise_seed = derive_seed(config.seed ^ STREAM_NOISE, step);
            step += 1;
            let lg = loss_and_grad(&net, data, batch, config.n_mc, config.sparsity_lambda, noise_seed)?;
            data_sum += lg.data_loss * batch.len() as f64;
            adam_mu.step(&mut net.mu, &lg.grad_mu, &net.mask, config.learning_rate);
            adam_rho.step(&mut net.rho, &lg.grad_rho, &net.mask, config.learning_rate);
        }

        if config.prune_every > 0 && epoch % config.prune_every == 0 {
            net = snr_prune(&net, config.prune_threshold);
        }

        let data_loss = data_sum / rows as f64;
        let penalty = config.sparsity_lambda * net.l1_norm();
        let total_loss = data_loss + penalty;
        if !total_loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch,
                loss: total_loss,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            total_loss,
            data_loss,
            penalty,
            active_params: net.active_params(),
        });
    }
    Ok((net, history))
}

pub const CHECKPOINT_FORMAT: &str = "lettuce-bnode-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layout: NetLayout,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub mask: Vec<bool>,
    pub stats: NormStats,
    pub train_config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
}

impl Checkpoint {
    pub fn network(&self) -> BayesianMLP {
        BayesianMLP {
            layout: self.layout.clone(),
            mu: self.mu.clone(),
            rho: self.rho.clone(),
            mask: self.mask.clone(),
        }
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &BayesianMLP,
    stats: &NormStats,
    config: &TrainConfig,
    config_hash: &str,
) -> Result<()> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layout: net.layout.clone(),
        mu: net.mu.clone(),
        rho: net.rho.clone(),
        mask: net.mask.clone(),
        stats: stats.clone(),
        train_config: config.clone(),
        config_hash: config_hash.into(),
        seed: config.seed,
    };
    write_json(path, &ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "unsupported checkpoint `{}` version {}",
            ckpt.format, ckpt.version
        )));
    }
    ckpt.network().validate()?;
    ckpt.stats.validate()?;
    Ok(ckpt)
}

/// Loads a checkpoint and insists on a specific network layout.
pub fn load_checkpoint_for(path: impl AsRef<Path>, layout: &NetLayout) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.layout != layout {
        return Err(Error::SchemaMismatch(format!(
            "field `layout` differs: checkpoint has {:?}, expected {:?}",
            ckpt.layout, layout
        )));
    }
    Ok(ckpt)
}
