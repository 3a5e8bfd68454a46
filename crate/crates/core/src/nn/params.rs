//! Named trainable tensors with gradient and Adam moment buffers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor2,
    pub grad: Tensor2,
    pub adam_m: Tensor2,
    pub adam_v: Tensor2,
}

impl ParamEntry {
    fn new(value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2::zeros(r, c),
            adam_m: Tensor2::zeros(r, c),
            adam_v: Tensor2::zeros(r, c),
        }
    }
}

/// Every trainable tensor of a model plus non-trainable buffers
/// (batch-norm running statistics), both keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
    buffers: BTreeMap<String, Tensor2>,
    step_count: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor2) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2> {
        self.entry(name).map(|e| &e.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.entry_mut(name).map(|e| &mut e.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2> {
        self.entry(name).map(|e| &e.grad)
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.entry_mut(name).map(|e| &mut e.grad)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor2> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::State(format!("unknown buffer `{name}`")))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown buffer `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.data().len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step_count += 1;
        self.step_count
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    /// Replaces every value and buffer with its nearest `f32`, the precision
    /// checkpoints store.
    pub fn round_to_f32(&mut self) {
        for e in self.entries.values_mut() {
            for v in e.value.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
        for b in self.buffers.values_mut() {
            for v in b.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    /// True when values and buffers (not gradients or moments) are identical.
    pub fn same_values(&self, other: &ParameterStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, a), (kb, b))| ka == kb && a.value == b.value)
            && self.buffers == other.buffers
    }
}

/// Uniform(-b, b) with `b = sqrt(6 / (fan_in + fan_out))` for an `out × in` weight.
pub fn glorot_uniform<R: Rng>(rng: &mut R, out_dim: usize, in_dim: usize) -> Tensor2 {
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..out_dim * in_dim).map(|_| dist.sample(rng)).collect();
    Tensor2::from_vec(out_dim, in_dim, data).expect("sized")
}

pub fn normal_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor2 {
    let dist = Normal::new(0.0, std).expect("std >= 0");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}
