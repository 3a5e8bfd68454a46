//! Scenario-oriented module: two stacked linear layers whose weights and
//! biases are read out of a flat scenario condition vector.
//!
//! Condition layout, in order: `W1` (`r × input_dim`, row-major), `b1` (`r`),
//! `W2` (`output_dim × r`, row-major), `b2` (`output_dim`). The first layer is
//! the bottleneck. No activation sits between the two layers, so each sample
//! sees a conditioned rank-`r` affine map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseSlot, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicShape {
    pub input_dim: usize,
    pub bottleneck_dim: usize,
    pub output_dim: usize,
}

impl DynamicShape {
    pub const NUM_LAYERS: usize = 2;

    pub fn new(input_dim: usize, bottleneck_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || bottleneck_dim == 0 || output_dim == 0 {
            return Err(Error::Config(format!(
                "dynamic layer dims must be positive: {input_dim}/{bottleneck_dim}/{output_dim}"
            )));
        }
        Ok(Self {
            input_dim,
            bottleneck_dim,
            output_dim,
        })
    }

    pub fn condition_length(&self) -> usize {
        let (i, r, o) = (self.input_dim, self.bottleneck_dim, self.output_dim);
        i * r + r + r * o + o
    }

    pub fn bottleneck_slot(&self) -> DenseSlot {
        let (i, r) = (self.input_dim, self.bottleneck_dim);
        DenseSlot {
            w_offset: 0,
            b_offset: i * r,
            in_dim: i,
            out_dim: r,
        }
    }

    pub fn output_slot(&self) -> DenseSlot {
        let (i, r, o) = (self.input_dim, self.bottleneck_dim, self.output_dim);
        DenseSlot {
            w_offset: i * r + r,
            b_offset: i * r + r + r * o,
            in_dim: r,
            out_dim: o,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCondition {
    values: Vec<f64>,
    shape: DynamicShape,
}

impl ScenarioCondition {
    pub fn new(values: Vec<f64>, shape: DynamicShape) -> Result<Self> {
        let expected = shape.condition_length();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "scenario condition: expected {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { values, shape })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> DynamicShape {
        self.shape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicLayerSet {
    pub w1: Tensor2,
    pub b1: Vec<f64>,
    pub w2: Tensor2,
    pub b2: Vec<f64>,
}

pub fn reshape_condition(sc: &ScenarioCondition) -> Result<DynamicLayerSet> {
    let shape = sc.shape;
    let v = sc.values();
    if v.len() != shape.condition_length() {
        return Err(Error::Shape(format!(
            "scenario condition: expected {} values, got {}",
            shape.condition_length(),
            v.len()
        )));
    }
    let (first, second) = (shape.bottleneck_slot(), shape.output_slot());
    let take = |slot: DenseSlot| -> Result<(Tensor2, Vec<f64>)> {
        let w = Tensor2::from_vec(
            slot.out_dim,
            slot.in_dim,
            v[slot.w_offset..slot.w_offset + slot.out_dim * slot.in_dim].to_vec(),
        )?;
        Ok((w, v[slot.b_offset..slot.b_offset + slot.out_dim].to_vec()))
    };
    let (w1, b1) = take(first)?;
    let (w2, b2) = take(second)?;
    Ok(DynamicLayerSet { w1, b1, w2, b2 })
}

impl DynamicLayerSet {
    pub fn shape(&self) -> Result<DynamicShape> {
        let shape = DynamicShape::new(self.w1.cols(), self.w1.rows(), self.w2.rows())?;
        if self.b1.len() != shape.bottleneck_dim
            || self.w2.cols() != shape.bottleneck_dim
            || self.b2.len() != shape.output_dim
        {
            return Err(Error::Shape(format!(
                "inconsistent dynamic layers: W1 {:?}, b1 {}, W2 {:?}, b2 {}",
                self.w1.shape(),
                self.b1.len(),
                self.w2.shape(),
                self.b2.len()
            )));
        }
        Ok(shape)
    }

    /// Inverse of [`reshape_condition`].
    pub fn flatten(&self) -> Result<ScenarioCondition> {
        let shape = self.shape()?;
        let mut values = Vec::with_capacity(shape.condition_length());
        values.extend_from_slice(self.w1.data());
        values.extend_from_slice(&self.b1);
        values.extend_from_slice(self.w2.data());
        values.extend_from_slice(&self.b2);
        ScenarioCondition::new(values, shape)
    }
}

/// `W2 (W1 h + b1) + b2` for every row of `h`.
pub fn dynamic_forward(h: &Tensor2, layers: &DynamicLayerSet) -> Result<Tensor2> {
    let shape = layers.shape()?;
    if h.cols() != shape.input_dim {
        return Err(Error::Shape(format!(
            "dynamic layer: input has {} columns, expected {}",
            h.cols(),
            shape.input_dim
        )));
    }
    let mid = h.matmul_transposed(&layers.w1, Some(&layers.b1));
    Ok(mid.matmul_transposed(&layers.w2, Some(&layers.b2)))
}
