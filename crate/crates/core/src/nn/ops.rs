//! Elementwise and row-wise functions shared by the tape, the metrics and the
//! inference paths.

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Clamp applied to predictions before taking logs in the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Keeps sigmoid outputs strictly inside (0, 1) in `f64`.
const PROB_FLOOR: f64 = 1e-15;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Max-shifted softmax over one slice, in place.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1 − ε]`.
pub fn bce_loss(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!(
            "bce: {} predictions vs {} labels",
            pred.len(),
            label.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("bce: empty input".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(label)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}
