//! Stacked fully connected blocks: `act(dropout(bn(W h + b)))` per layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{glorot_uniform, ParameterStore};
use super::tape::{BatchStats, NodeId, Tape};
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::seed;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcStackConfig {
    /// Input width followed by the output width of each layer.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub use_batch_norm: bool,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    /// Last layer is a plain affine map (no BN, dropout or activation).
    #[serde(default)]
    pub linear_output: bool,
}

impl FcStackConfig {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Self {
        Self {
            layer_sizes,
            activation,
            dropout_rate: 0.0,
            use_batch_norm: false,
            bn_momentum: default_momentum(),
            linear_output: false,
        }
    }

    pub fn with_linear_output(mut self, on: bool) -> Self {
        self.linear_output = on;
        self
    }

    /// Whether layer `k` gets the BN → dropout → activation tail.
    pub fn has_tail(&self, k: usize) -> bool {
        !(self.linear_output && k + 1 == self.num_layers())
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.use_batch_norm = on;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "{name}: need an input width and at least one layer, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!("{name}: zero layer width in {:?}", self.layer_sizes)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("{name}: dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config(format!("{name}: bn momentum {} not in (0, 1)", self.bn_momentum)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Trainable scalars: weights and biases, plus scale and shift under BN.
    pub fn scalar_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let bn = if self.use_batch_norm && self.has_tail(k) { 2 * w[1] } else { 0 };
                w[0] * w[1] + w[1] + bn
            })
            .sum()
    }
}

fn pname(prefix: &str, k: usize, what: &str) -> String {
    format!("{prefix}.{k}.{what}")
}

/// Pending running-statistics update from a train-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub mean_buffer: String,
    pub var_buffer: String,
    pub momentum: f64,
    pub stats: BatchStats,
}

pub fn apply_bn_updates(store: &mut ParameterStore, updates: &[BnUpdate]) -> Result<()> {
    for u in updates {
        let m = u.momentum;
        for (r, b) in store.buffer_mut(&u.mean_buffer)?.data_mut().iter_mut().zip(&u.stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in store.buffer_mut(&u.var_buffer)?.data_mut().iter_mut().zip(&u.stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
    Ok(())
}

/// Registers every parameter and buffer of a stack under `prefix`.
pub fn declare_fc_stack<R: Rng>(
    cfg: &FcStackConfig,
    store: &mut ParameterStore,
    prefix: &str,
    rng: &mut R,
) -> Result<()> {
    cfg.validate(prefix)?;
    for (k, w) in cfg.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        store.insert(pname(prefix, k, "weight"), glorot_uniform(rng, fan_out, fan_in))?;
        store.insert(pname(prefix, k, "bias"), Tensor2::zeros(1, fan_out))?;
        if cfg.use_batch_norm && cfg.has_tail(k) {
            store.insert(pname(prefix, k, "bn_gamma"), Tensor2::filled(1, fan_out, 1.0))?;
            store.insert(pname(prefix, k, "bn_beta"), Tensor2::zeros(1, fan_out))?;
            store.insert_buffer(pname(prefix, k, "bn_running_mean"), Tensor2::zeros(1, fan_out))?;
            store.insert_buffer(pname(prefix, k, "bn_running_var"), Tensor2::filled(1, fan_out, 1.0))?;
        }
    }
    Ok(())
}

pub(crate) fn dropout_mask(n: usize, rate: f64, dropout_seed: u64, prefix: &str, layer: usize) -> Vec<f64> {
    let mut rng = seed::rng(dropout_seed, &[seed::name_id(prefix), layer as u64]);
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Records the stack on `tape`. Train mode returns the batch-norm updates the
/// caller should apply once the step is accepted.
pub fn record_fc_stack(
    cfg: &FcStackConfig,
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    x: NodeId,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(NodeId, Vec<BnUpdate>)> {
    let cols = tape.value(x).cols();
    if cols != cfg.input_dim() {
        return Err(Error::Shape(format!(
            "layer `{}`: input has {cols} columns, expected {}",
            pname(prefix, 0, "weight"),
            cfg.input_dim()
        )));
    }
    let mut h = x;
    let mut updates = Vec::new();
    for k in 0..cfg.num_layers() {
        let w = tape.param(store, &pname(prefix, k, "weight"))?;
        let b = tape.param(store, &pname(prefix, k, "bias"))?;
        h = tape.affine(h, w, Some(b))?;
        if !cfg.has_tail(k) {
            continue;
        }
        if cfg.use_batch_norm {
            let gamma = tape.param(store, &pname(prefix, k, "bn_gamma"))?;
            let beta = tape.param(store, &pname(prefix, k, "bn_beta"))?;
            let mean_buffer = pname(prefix, k, "bn_running_mean");
            let var_buffer = pname(prefix, k, "bn_running_var");
            h = match mode {
                Mode::Train => {
                    let (out, stats) = tape.batch_norm(h, gamma, beta, BN_EPS)?;
                    updates.push(BnUpdate {
                        mean_buffer,
                        var_buffer,
                        momentum: cfg.bn_momentum,
                        stats,
                    });
                    out
                }
                Mode::Eval => {
                    let mean = store.buffer(&mean_buffer)?.data().to_vec();
                    let var = store.buffer(&var_buffer)?.data().to_vec();
                    tape.batch_norm_fixed(h, gamma, beta, &mean, &var, BN_EPS)?
                }
            };
        }
        if mode == Mode::Train && cfg.dropout_rate > 0.0 {
            let n = tape.value(h).data().len();
            let mask = dropout_mask(n, cfg.dropout_rate, dropout_seed, prefix, k);
            h = tape.dropout(h, mask)?;
        }
        h = match cfg.activation {
            Activation::Relu => tape.relu(h),
            Activation::Tanh => tape.tanh(h),
            Activation::Identity => h,
        };
    }
    Ok((h, updates))
}

/// Eager forward of one stack. Train mode uses batch statistics, updates the
/// running statistics in `store`, and applies inverted dropout keyed by `rng_seed`.
pub fn fc_stack_forward(
    cfg: &FcStackConfig,
    store: &mut ParameterStore,
    prefix: &str,
    x: &Tensor2,
    mode: Mode,
    rng_seed: u64,
) -> Result<Tensor2> {
    cfg.validate(prefix)?;
    let mut tape = Tape::new();
    let xin = tape.input(x.clone());
    let (out, updates) = record_fc_stack(cfg, &mut tape, store, prefix, xin, mode, rng_seed)?;
    apply_bn_updates(store, &updates)?;
    Ok(tape.value(out).clone())
}
