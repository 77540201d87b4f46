//! Mean-field Gaussian Bayesian MLP.
//!
//! Every weight and bias is an independent Gaussian with mean `mu[i]` and
//! standard deviation `softplus(rho[i])`. A draw is
//! `values = mask * (mu + softplus(rho) * eps)` with `eps ~ N(0, I)`, which
//! makes the loss differentiable in `(mu, rho)` along the sampled path.
//!
//! The input layer passes features through unchanged; each hidden layer is
//! affine followed by its activation; the output layer is affine.
//! Parameters are stored flat, layer by layer, as a row-major
//! `fan_out x fan_in` weight block followed by `fan_out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Row access for supervised training data.
pub trait TrainingRows {
    fn len(&self) -> usize;
    fn feature(&self, row: usize) -> &[f64];
    fn target(&self, row: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TrainingRows for Dataset {
    fn len(&self) -> usize {
        self.rows()
    }
    fn feature(&self, row: usize) -> &[f64] {
        &self.features[row]
    }
    fn target(&self, row: usize) -> &[f64] {
        &self.targets[row]
    }
}

/// Plain in-memory rows of arbitrary width.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowSet {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl TrainingRows for RowSet {
    fn len(&self) -> usize {
        self.features.len()
    }
    fn feature(&self, row: usize) -> &[f64] {
        &self.features[row]
    }
    fn target(&self, row: usize) -> &[f64] {
        &self.targets[row]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetLayout {
    pub input_dim: usize,
    pub hidden_layers: Vec<HiddenLayer>,
    pub output_dim: usize,
}

impl Default for NetLayout {
    /// 11 features, one tanh layer of 4 neurons, 4 outputs.
    fn default() -> Self {
        Self::new(11, &[(4, Activation::Tanh)], 4)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
    activation: Activation,
}

impl LayerShape {
    fn n_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

impl NetLayout {
    pub fn new(input_dim: usize, hidden: &[(usize, Activation)], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: hidden
                .iter()
                .map(|&(width, activation)| HiddenLayer { width, activation })
                .collect(),
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers.iter().any(|l| l.width == 0) {
            return Err(Error::InvalidArgument(format!("layer widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut fan_in = self.input_dim;
        let mut offset = 0;
        let widths = self
            .hidden_layers
            .iter()
            .map(|l| (l.width, l.activation))
            .chain(std::iter::once((self.output_dim, Activation::Identity)));
        for (fan_out, activation) in widths {
            let shape = LayerShape {
                fan_in,
                fan_out,
                offset,
                activation,
            };
            offset += shape.n_params();
            fan_in = fan_out;
            out.push(shape);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(LayerShape::n_params).sum()
    }

    /// `true` for weight entries, `false` for biases, in flat parameter order.
    pub fn weight_flags(&self) -> Vec<bool> {
        let mut flags = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            flags.extend(std::iter::repeat_n(true, l.fan_in * l.fan_out));
            flags.extend(std::iter::repeat_n(false, l.fan_out));
        }
        flags
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean-field Gaussian network. Parameters are stored flat, layer by layer:
/// the `fan_out x fan_in` weight matrix in row-major order, then the
/// `fan_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianMLP {
    pub layout: NetLayout,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSample {
    pub values: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl BayesianMLP {
    /// Glorot-uniform weight means, zero bias means, uniform spread
    /// `init_sigma`, nothing pruned.
    pub fn init(layout: &NetLayout, seed: u64, init_sigma: f64) -> Result<Self> {
        layout.validate()?;
        if !(init_sigma > 0.0 && init_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "init_sigma must be > 0, got {init_sigma}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = layout.n_params();
        let mut mu = vec![0.0; n];
        for l in layout.layers() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for w in &mut mu[l.offset..l.offset + l.fan_in * l.fan_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            layout: layout.clone(),
            mu,
            rho: vec![inv_softplus(init_sigma); n],
            mask: vec![true; n],
        })
    }

    pub fn n_params(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn active_params(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The posterior mean network with pruned entries zeroed.
    pub fn mean_values(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.mask)
            .map(|(&m, &keep)| if keep { m } else { 0.0 })
            .collect()
    }

    /// L1 norm of the unpruned means.
    pub fn l1_norm(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.mask)
            .filter(|(_, &keep)| keep)
            .map(|(m, _)| m.abs())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let n = self.layout.n_params();
        for (name, len) in [
            ("mu", self.mu.len()),
            ("rho", self.rho.len()),
            ("mask", self.mask.len()),
        ] {
            if len != n {
                return Err(Error::SchemaMismatch(format!(
                    "layout expects {n} parameters but `{name}` has {len}"
                )));
            }
        }
        if self.mu.iter().chain(&self.rho).any(|v| !v.is_finite()) {
            return Err(Error::SchemaMismatch("non-finite network parameter".into()));
        }
        Ok(())
    }

    fn draw(&self, epsilon: Vec<f64>) -> ParamSample {
        let values = self
            .mu
            .iter()
            .zip(&self.rho)
            .zip(&self.mask)
            .zip(&epsilon)
            .map(|(((&m, &r), &keep), &e)| if keep { m + softplus(r) * e } else { 0.0 })
            .collect();
        ParamSample { values, epsilon }
    }

    fn draw_from(&self, rng: &mut ChaCha8Rng) -> ParamSample {
        let epsilon = (0..self.n_params()).map(|_| StandardNormal.sample(rng)).collect();
        self.draw(epsilon)
    }

    pub fn sample_params(&self, seed: u64) -> ParamSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.draw_from(&mut rng)
    }
}

/// Evaluates the network with concrete parameter values.
pub fn forward(values: &[f64], layout: &NetLayout, feature: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), layout.n_params());
    debug_assert_eq!(feature.len(), layout.input_dim);
    let mut a = feature.to_vec();
    for l in layout.layers() {
        let w = &values[l.offset..l.offset + l.fan_in * l.fan_out];
        let b = &values[l.offset + l.fan_in * l.fan_out..l.offset + l.n_params()];
        a = (0..l.fan_out)
            .map(|o| {
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                let z = b[o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
                l.activation.apply(z)
            })
            .collect();
    }
    a
}

/// Forward pass that keeps the per-layer pre/post activations, then
/// backpropagates `d loss / d output` into `grad` (accumulated).
struct Tape {
    layers: Vec<LayerShape>,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

impl Tape {
    fn new(layout: &NetLayout) -> Self {
        let layers = layout.layers();
        let mut acts = vec![vec![0.0; layout.input_dim]];
        let mut pres = Vec::with_capacity(layers.len());
        for l in &layers {
            acts.push(vec![0.0; l.fan_out]);
            pres.push(vec![0.0; l.fan_out]);
        }
        Self { layers, acts, pres }
    }

    fn forward(&mut self, values: &[f64], feature: &[f64]) -> &[f64] {
        self.acts[0].copy_from_slice(feature);
        for (li, l) in self.layers.iter().enumerate() {
            let w = &values[l.offset..l.offset + l.fan_in * l.fan_out];
            let b = &values[l.offset + l.fan_in * l.fan_out..l.offset + l.n_params()];
            let (prev, rest) = self.acts.split_at_mut(li + 1);
            let input = &prev[li];
            let out = &mut rest[0];
            for o in 0..l.fan_out {
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                let z = b[o] + row.iter().zip(input).map(|(wi, ai)| wi * ai).sum::<f64>();
                self.pres[li][o] = z;
                out[o] = l.activation.apply(z);
            }
        }
        self.acts.last().expect("at least one layer")
    }

    fn backward(&self, values: &[f64], d_out: &[f64], grad: &mut [f64]) {
        let mut delta: Vec<f64> = d_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            // delta currently holds d loss / d activation of this layer
            for o in 0..l.fan_out {
                delta[o] *= l.activation.grad(self.pres[li][o], self.acts[li + 1][o]);
            }
            let input = &self.acts[li];
            let wg_off = l.offset;
            let bg_off = l.offset + l.fan_in * l.fan_out;
            for o in 0..l.fan_out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                for (i, &ai) in input.iter().enumerate() {
                    grad[wg_off + o * l.fan_in + i] += g * ai;
                }
                grad[bg_off + o] += g;
            }
            if li > 0 {
                let w = &values[l.offset..l.offset + l.fan_in * l.fan_out];
                let mut next = vec![0.0; l.fan_in];
                for o in 0..l.fan_out {
                    let g = delta[o];
                    for (i, n) in next.iter_mut().enumerate() {
                        *n += w[o * l.fan_in + i] * g;
                    }
                }
                delta = next;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// `data_loss + penalty`.
    pub loss: f64,
    /// Mean over samples and rows of the squared error norm.
    pub data_loss: f64,
    /// `sparsity_lambda * ||mask .* mu||_1`.
    pub penalty: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// Monte-Carlo estimate of the expected squared error over the weight
/// posterior, plus an L1 penalty on the unpruned means, with its pathwise
/// gradient. The `n_mc` noise draws depend only on `seed`.
pub fn loss_and_grad<D: TrainingRows + ?Sized>(
    net: &BayesianMLP,
    data: &D,
    batch: &[usize],
    n_mc: usize,
    sparsity_lambda: f64,
    seed: u64,
) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be >= 1".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&r| r >= data.len()) {
        return Err(Error::InvalidArgument(format!("row {bad} out of range")));
    }
    let (fin, fout) = (data.feature(batch[0]).len(), data.target(batch[0]).len());
    if net.layout.input_dim != fin || net.layout.output_dim != fout {
        return Err(Error::SchemaMismatch(format!(
            "layout {}->{} does not match data {fin}->{fout}",
            net.layout.input_dim, net.layout.output_dim
        )));
    }

    let n = net.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new(&net.layout);
    let scale = 1.0 / (n_mc * batch.len()) as f64;

    let mut data_loss = 0.0;
    let mut grad_mu = vec![0.0; n];
    let mut grad_rho = vec![0.0; n];
    let mut g_values = vec![0.0; n];
    let mut d_out = vec![0.0; net.layout.output_dim];

    for _ in 0..n_mc {
        let sample = net.draw_from(&mut rng);
        g_values.iter_mut().for_each(|g| *g = 0.0);
        for &row in batch {
            let target = data.target(row);
            let pred = tape.forward(&sample.values, data.feature(row));
            for (o, (p, t)) in pred.iter().zip(target).enumerate() {
                let r = p - t;
                data_loss += r * r;
                d_out[o] = 2.0 * r * scale;
            }
            tape.backward(&sample.values, &d_out, &mut g_values);
        }
        for i in 0..n {
            if net.mask[i] {
                grad_mu[i] += g_values[i];
                grad_rho[i] += g_values[i] * sample.epsilon[i] * sigmoid(net.rho[i]);
            }
        }
    }
    data_loss *= scale;

    let penalty = sparsity_lambda * net.l1_norm();
    if sparsity_lambda != 0.0 {
        for i in 0..n {
            if net.mask[i] && net.mu[i] != 0.0 {
                grad_mu[i] += sparsity_lambda * net.mu[i].signum();
            }
        }
    }

    Ok(LossGrad {
        loss: data_loss + penalty,
        data_loss,
        penalty,
        grad_mu,
        grad_rho,
    })
}

/// Prunes every unpruned parameter whose signal-to-noise ratio
/// `|mu| / sigma` falls below `threshold`.
pub fn snr_prune(net: &BayesianMLP, threshold: f64) -> BayesianMLP {
    let mut out = net.clone();
    for i in 0..out.n_params() {
        if out.mask[i] && out.mu[i].abs() / softplus(out.rho[i]) < threshold {
            out.mask[i] = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NormStats;

    fn toy_layout() -> NetLayout {
        NetLayout::new(2, &[(2, Activation::Tanh)], 1)
    }

    #[test]
    fn parameter_count() {
        assert_eq!(NetLayout::default().n_params(), 68);
        assert_eq!(toy_layout().n_params(), 9);
        assert_eq!(
            NetLayout::new(3, &[(5, Activation::Relu), (2, Activation::Tanh)], 1).n_params(),
            20 + 12 + 3
        );
    }

    #[test]
    fn init_is_seeded_and_sigma_exact() {
        let a = BayesianMLP::init(&NetLayout::default(), 7, 1e-3).unwrap();
        let b = BayesianMLP::init(&NetLayout::default(), 7, 1e-3).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma().iter().all(|s| (s - 1e-3).abs() < 1e-12));
        assert_eq!(a.active_params(), 68);
        assert!(BayesianMLP::init(&NetLayout::default(), 7, 0.0).is_err());
    }

    #[test]
    fn softplus_inverse() {
        for y in [1e-6, 1e-3, 0.05, 1.0, 30.0] {
            assert!((softplus(inv_softplus(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layout = NetLayout::default();
        let out = forward(&vec![0.0; 68], &layout, &[0.3; 11]);
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn toy_forward_by_hand() {
        // W1 = [[0.1, 0.2], [0.3, 0.4]], b1 = [0.5, 0.6], W2 = [[0.7, 0.8]], b2 = [0.9]
        let values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
        let x = [1.0, -2.0];
        let h1 = (0.1f64 * 1.0 + 0.2 * -2.0 + 0.5).tanh();
        let h2 = (0.3f64 * 1.0 + 0.4 * -2.0 + 0.6).tanh();
        let expected = 0.7 * h1 + 0.8 * h2 + 0.9;
        let out = forward(&values, &toy_layout(), &x);
        assert!((out[0] - expected).abs() < 1e-12);
        // tanh(0.2) and tanh(0.1)
        assert!((out[0] - (0.7 * 0.197_375_320_224_904_f64 + 0.8 * 0.099_667_994_624_955_8 + 0.9)).abs() < 1e-12);
    }

    #[test]
    fn saturated_hidden_layer_bounds_output() {
        let layout = NetLayout::default();
        let net = BayesianMLP::init(&layout, 3, 0.1).unwrap();
        let mut values = net.mean_values();
        for v in &mut values[..11 * 4 + 4] {
            *v *= 1e6;
        }
        let out_w = &values[48..64];
        let out_b = &values[64..68];
        let out = forward(&values, &layout, &[0.7; 11]);
        for o in 0..4 {
            let bound: f64 = out_w[o * 4..o * 4 + 4].iter().map(|w| w.abs()).sum::<f64>() + out_b[o].abs();
            assert!(out[o].abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn degenerate_posterior_samples_mean() {
        let mut net = BayesianMLP::init(&NetLayout::default(), 1, 0.05).unwrap();
        net.rho.iter_mut().for_each(|r| *r = -60.0);
        let s = net.sample_params(99);
        for (v, m) in s.values.iter().zip(&net.mu) {
            assert!((v - m).abs() < 1e-12);
        }
        assert_eq!(net.sample_params(99), net.sample_params(99));
    }

    #[test]
    fn masked_parameters_are_zero_in_samples() {
        let mut net = BayesianMLP::init(&NetLayout::default(), 1, 0.05).unwrap();
        net.mask[3] = false;
        let s = net.sample_params(5);
        assert_eq!(s.values[3], 0.0);
    }

    #[test]
    fn snr_prune_examples() {
        let mut net = BayesianMLP::init(&toy_layout(), 0, 0.1).unwrap();
        net.mu = vec![1.0, 0.001, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        net.rho = vec![inv_softplus(0.1); 9];
        let pruned = snr_prune(&net, 1.0);
        assert!(pruned.mask[0]);
        assert!(!pruned.mask[1]);
        assert_eq!(snr_prune(&net, 0.0).mask, net.mask);
        assert_eq!(snr_prune(&net, 1e18).active_params(), 0);
        // masked entries are never revived
        let mut revived = pruned.clone();
        revived.mu[1] = 100.0;
        assert!(!snr_prune(&revived, 0.0).mask[1]);
    }

    fn toy_dataset(rows: &[([f64; 11], [f64; 4])]) -> Dataset {
        Dataset {
            features: rows.iter().map(|r| r.0).collect(),
            targets: rows.iter().map(|r| r.1).collect(),
            stats: NormStats::identity(),
            row_index: (0..rows.len()).map(|k| (0, k)).collect(),
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let mut net = BayesianMLP::init(&NetLayout::default(), 2, 0.05).unwrap();
        net.rho.iter_mut().for_each(|r| *r = -80.0);
        let feats = [[0.1; 11], [-0.4; 11]];
        let values = net.mean_values();
        let rows: Vec<_> = feats
            .iter()
            .map(|f| {
                let out = forward(&values, &net.layout, f);
                (*f, [out[0], out[1], out[2], out[3]])
            })
            .collect();
        let ds = toy_dataset(&rows);
        let lg = loss_and_grad(&net, &ds, &[0, 1], 2, 0.0, 4).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad_mu.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn penalty_isolated() {
        let mut net = BayesianMLP::init(&NetLayout::default(), 2, 0.05).unwrap();
        net.rho.iter_mut().for_each(|r| *r = -80.0);
        net.mask[0] = false;
        let f = [0.2; 11];
        let out = forward(&net.mean_values(), &net.layout, &f);
        let ds = toy_dataset(&[(f, [out[0], out[1], out[2], out[3]])]);
        let lg = loss_and_grad(&net, &ds, &[0], 1, 1.0, 0).unwrap();
        let expected: f64 = net.mu[1..].iter().map(|m| m.abs()).sum();
        assert!((lg.loss - expected).abs() < 1e-12);
        assert_eq!(lg.grad_mu[0], 0.0);
        assert_eq!(lg.grad_rho[0], 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let net = BayesianMLP::init(&NetLayout::default(), 2, 0.05).unwrap();
        let ds = toy_dataset(&[([0.0; 11], [0.0; 4])]);
        assert!(matches!(
            loss_and_grad(&net, &ds, &[], 1, 0.0, 0),
            Err(Error::EmptyBatch)
        ));
    }
}
