//! Inference-only forms of the trained models.
//!
//! Two rewrites keep results equal to the tape forward (up to summation order):
//! anything that depends on the scenario id alone is computed once per
//! scenario, and the first affine layer of any stack that reads the common
//! embeddings is distributed over fields, so each `(field, value)` pair keeps
//! its projected row. A stack input of `Σ_i w_i · e_i` then costs one weighted
//! sum of cached rows instead of a full matrix product.
//!
//! When the implicit condition stack is a single affine layer, the condition
//! of head `g` is `c + Σ_i a_gi · Q_i[v_i]` and both dynamic layers are linear
//! in it. Each field's bottleneck term `W1(Q_i) h + b1(Q_i)` is then shared by
//! all heads, and a head only mixes those terms and applies its second layer.

use std::collections::BTreeMap;

use super::hierrec::{EXPLICIT_FC, EXPLICIT_PROJ, GLOBAL_FC, IMPLICIT_FC, OUTPUT};
use super::shared_bottom::{tower_prefix, BOTTOM_FC};
use super::{common_table, CtrModel, HierRecConfig, HierRecModel, SharedBottomConfig, SharedBottomModel};
use crate::data::{Batch, FeatureSchema};
use crate::dynamic::DynamicShape;
use crate::error::Result;
use crate::nn::{axpy, dot, sigmoid, Activation, DenseSlot, FcStackConfig, Mode, ParameterStore, Tape, Tensor2, BN_EPS};

fn weight<'a>(store: &'a ParameterStore, prefix: &str, k: usize) -> Result<&'a Tensor2> {
    store.value(&format!("{prefix}.{k}.weight"))
}

fn bias<'a>(store: &'a ParameterStore, prefix: &str, k: usize) -> Result<&'a [f64]> {
    Ok(store.value(&format!("{prefix}.{k}.bias"))?.data())
}

/// BN (running statistics) and activation of layer `k`, in place.
fn layer_tail(cfg: &FcStackConfig, store: &ParameterStore, prefix: &str, k: usize, x: &mut Tensor2) -> Result<()> {
    if !cfg.has_tail(k) {
        return Ok(());
    }
    if cfg.use_batch_norm {
        let g = store.value(&format!("{prefix}.{k}.bn_gamma"))?.data();
        let b = store.value(&format!("{prefix}.{k}.bn_beta"))?.data();
        let m = store.buffer(&format!("{prefix}.{k}.bn_running_mean"))?.data();
        let v = store.buffer(&format!("{prefix}.{k}.bn_running_var"))?.data();
        let inv: Vec<f64> = v.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        for r in 0..x.rows() {
            for (j, e) in x.row_mut(r).iter_mut().enumerate() {
                *e = g[j] * ((*e - m[j]) * inv[j]) + b[j];
            }
        }
    }
    match cfg.activation {
        Activation::Relu => x.data_mut().iter_mut().for_each(|e| *e = e.max(0.0)),
        Activation::Tanh => x.data_mut().iter_mut().for_each(|e| *e = e.tanh()),
        Activation::Identity => {}
    }
    Ok(())
}

/// Remainder of a stack whose first affine layer has already been applied.
fn finish_stack(cfg: &FcStackConfig, store: &ParameterStore, prefix: &str, mut x: Tensor2) -> Result<Tensor2> {
    layer_tail(cfg, store, prefix, 0, &mut x)?;
    for k in 1..cfg.num_layers() {
        x = x.matmul_transposed(weight(store, prefix, k)?, Some(bias(store, prefix, k)?));
        layer_tail(cfg, store, prefix, k, &mut x)?;
    }
    Ok(x)
}

fn run_stack(cfg: &FcStackConfig, store: &ParameterStore, prefix: &str, x: &Tensor2) -> Result<Tensor2> {
    let pre = x.matmul_transposed(weight(store, prefix, 0)?, Some(bias(store, prefix, 0)?));
    finish_stack(cfg, store, prefix, pre)
}

/// Per field, every embedding row pushed through the matching column block
/// of the stack's first weight matrix: `card_i × width`.
fn field_projections(store: &ParameterStore, prefix: &str, schema: &FeatureSchema, d: usize) -> Result<Vec<Tensor2>> {
    let w = weight(store, prefix, 0)?;
    (0..schema.num_common())
        .map(|i| {
            let mut block = Tensor2::zeros(w.rows(), d);
            for o in 0..w.rows() {
                block.row_mut(o).copy_from_slice(&w.row(o)[i * d..(i + 1) * d]);
            }
            Ok(store.value(&common_table(i))?.matmul_transposed(&block, None))
        })
        .collect()
}

/// `bias + Σ_i scale_i · proj_i[id_i]` for every row of the batch.
fn projected_first_layer(
    batch: &Batch,
    proj: &[Tensor2],
    bias: &[f64],
    scale: impl Fn(usize, usize) -> f64,
) -> Tensor2 {
    let mut out = Tensor2::zeros(batch.len(), bias.len());
    for r in 0..batch.len() {
        let row = out.row_mut(r);
        row.copy_from_slice(bias);
        for (i, &id) in batch.common(r).iter().enumerate() {
            axpy(scale(r, i), proj[i].row(id), row);
        }
    }
    out
}

/// `out += scale · (W x + b)` for the dense layer stored at `slot` of `cond`.
fn add_slot(slot: DenseSlot, cond: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
    for (o, v) in out.iter_mut().enumerate() {
        let w = &cond[slot.w_offset + o * slot.in_dim..slot.w_offset + (o + 1) * slot.in_dim];
        *v += scale * (dot(w, x) + cond[slot.b_offset + o]);
    }
}

/// Both dynamic layers for one sample: `W2 (W1 x + b1) + b2`.
fn dynamic_row(shape: DynamicShape, cond: &[f64], x: &[f64], mid: &mut [f64], out: &mut [f64]) {
    let (s1, s2) = (shape.bottleneck_slot(), shape.output_slot());
    for (j, m) in mid.iter_mut().enumerate() {
        *m = dot(&cond[s1.w_offset + j * s1.in_dim..s1.w_offset + (j + 1) * s1.in_dim], x) + cond[s1.b_offset + j];
    }
    for (o, v) in out.iter_mut().enumerate() {
        *v = dot(&cond[s2.w_offset + o * s2.in_dim..s2.w_offset + (o + 1) * s2.in_dim], mid) + cond[s2.b_offset + o];
    }
}

#[derive(Debug, Clone)]
pub struct FrozenHierRec {
    config: HierRecConfig,
    schema: FeatureSchema,
    store: ParameterStore,
    global_proj: Vec<Tensor2>,
    implicit_proj: Vec<Tensor2>,
    /// Per scenario: explicit condition vector.
    explicit_cond: Vec<Vec<f64>>,
    /// Per scenario: `G × I` normalized attention.
    attention: Vec<Tensor2>,
}

impl FrozenHierRec {
    pub fn new(model: &HierRecModel) -> Result<Self> {
        let config = model.config().clone();
        let schema = model.schema().clone();
        let store = model.params().clone();
        let d = config.embedding_dim;
        let global_proj = field_projections(&store, GLOBAL_FC, &schema, d)?;
        let scenarios = schema.scenario_cardinality;
        let mut explicit_cond = Vec::new();
        if !config.ablate_explicit {
            let mut tape = Tape::new();
            let ids: Vec<usize> = (0..scenarios).collect();
            let e_s = tape.lookup(&store, super::hierrec::SCENARIO_TABLE, &ids)?;
            let (sc, _) =
                crate::nn::record_fc_stack(&config.explicit_condition_fc, &mut tape, &store, EXPLICIT_FC, e_s, Mode::Eval, 0)?;
            let sc = tape.value(sc);
            explicit_cond = (0..scenarios).map(|s| sc.row(s).to_vec()).collect();
        }
        let (mut implicit_proj, mut attention) = (Vec::new(), Vec::new());
        if !config.ablate_implicit {
            implicit_proj = field_projections(&store, IMPLICIT_FC, &schema, d)?;
            attention = (0..scenarios)
                .map(|s| model.attention_weights(s).map(|(_, norm)| norm))
                .collect::<Result<_>>()?;
        }
        Ok(Self {
            config,
            schema,
            store,
            global_proj,
            implicit_proj,
            explicit_cond,
            attention,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        batch.validate(&self.schema)?;
        let cfg = &self.config;
        let st = &self.store;
        let n = batch.len();

        let pre = projected_first_layer(batch, &self.global_proj, bias(st, GLOBAL_FC, 0)?, |_, _| 1.0);
        let o_global = finish_stack(&cfg.global_fc, st, GLOBAL_FC, pre)?;

        let o_explicit = if cfg.ablate_explicit {
            o_global.matmul_transposed(weight(st, EXPLICIT_PROJ, 0)?, Some(bias(st, EXPLICIT_PROJ, 0)?))
        } else {
            let shape = cfg.explicit_shape()?;
            let mut out = Tensor2::zeros(n, cfg.explicit_out_dim);
            let mut mid = vec![0.0; cfg.bottleneck_r];
            for r in 0..n {
                let cond = &self.explicit_cond[batch.scenario_ids[r]];
                dynamic_row(shape, cond, o_global.row(r), &mut mid, out.row_mut(r));
            }
            out
        };

        let head = if cfg.ablate_implicit {
            o_explicit
        } else {
            let shape = cfg.implicit_shape()?;
            if cfg.implicit_condition_fc.num_layers() == 1 && !cfg.implicit_condition_fc.has_tail(0) {
                self.linear_heads(batch, shape, &o_explicit)?
            } else {
                self.stacked_heads(batch, shape, &o_explicit)?
            }
        };

        let w = weight(st, OUTPUT, 0)?.row(0);
        let b = bias(st, OUTPUT, 0)?[0];
        Ok((0..n).map(|r| sigmoid(dot(head.row(r), w) + b)).collect())
    }
}

impl FrozenHierRec {
    /// Heads through a multi-layer condition stack: every head materializes
    /// its condition vector.
    fn stacked_heads(&self, batch: &Batch, shape: DynamicShape, o_explicit: &Tensor2) -> Result<Tensor2> {
        let cfg = &self.config;
        let st = &self.store;
        let io = cfg.implicit_out_dim;
        let mut head = Tensor2::zeros(batch.len(), cfg.effective_heads() * io);
        let mut mid = vec![0.0; cfg.bottleneck_r];
        let b0 = bias(st, IMPLICIT_FC, 0)?;
        for g in 0..cfg.effective_heads() {
            let pre = projected_first_layer(batch, &self.implicit_proj, b0, |r, i| {
                self.attention[batch.scenario_ids[r]].get(g, i)
            });
            let conds = finish_stack(&cfg.implicit_condition_fc, st, IMPLICIT_FC, pre)?;
            for r in 0..batch.len() {
                let out = &mut head.row_mut(r)[g * io..(g + 1) * io];
                dynamic_row(shape, conds.row(r), o_explicit.row(r), &mut mid, out);
            }
        }
        Ok(head)
    }

    /// Heads through a single affine condition layer, using linearity in the
    /// condition so no per-head condition vector is formed.
    fn linear_heads(&self, batch: &Batch, shape: DynamicShape, o_explicit: &Tensor2) -> Result<Tensor2> {
        let cfg = &self.config;
        let (io, rb) = (cfg.implicit_out_dim, cfg.bottleneck_r);
        let heads = cfg.effective_heads();
        let fields = self.schema.num_common();
        let (s1, s2) = (shape.bottleneck_slot(), shape.output_slot());
        let c = bias(&self.store, IMPLICIT_FC, 0)?;
        let mut head = Tensor2::zeros(batch.len(), heads * io);
        // u[0] from the bias, u[1 + i] from field i
        let mut u = vec![0.0; (fields + 1) * rb];
        let mut mid = vec![0.0; rb];
        for r in 0..batch.len() {
            let h = o_explicit.row(r);
            let ids = batch.common(r);
            u.iter_mut().for_each(|v| *v = 0.0);
            add_slot(s1, c, h, 1.0, &mut u[..rb]);
            for (i, &id) in ids.iter().enumerate() {
                add_slot(s1, self.implicit_proj[i].row(id), h, 1.0, &mut u[(i + 1) * rb..(i + 2) * rb]);
            }
            let attention = &self.attention[batch.scenario_ids[r]];
            let row = head.row_mut(r);
            for g in 0..heads {
                let a = attention.row(g);
                mid.copy_from_slice(&u[..rb]);
                for (i, &w) in a.iter().enumerate() {
                    axpy(w, &u[(i + 1) * rb..(i + 2) * rb], &mut mid);
                }
                let out = &mut row[g * io..(g + 1) * io];
                add_slot(s2, c, &mid, 1.0, out);
                for (i, &id) in ids.iter().enumerate() {
                    add_slot(s2, self.implicit_proj[i].row(id), &mid, a[i], out);
                }
            }
        }
        Ok(head)
    }
}

#[derive(Debug, Clone)]
pub struct FrozenSharedBottom {
    config: SharedBottomConfig,
    schema: FeatureSchema,
    store: ParameterStore,
    bottom_proj: Vec<Tensor2>,
}

impl FrozenSharedBottom {
    pub fn new(model: &SharedBottomModel) -> Result<Self> {
        let config = model.config().clone();
        let schema = model.schema().clone();
        let store = model.params().clone();
        let bottom_proj = field_projections(&store, BOTTOM_FC, &schema, config.embedding_dim)?;
        Ok(Self {
            config,
            schema,
            store,
            bottom_proj,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        if let Some(&s) = batch.scenario_ids.iter().find(|&&s| s >= self.config.num_scenarios) {
            return Err(crate::Error::Routing {
                scenario: s,
                num_scenarios: self.config.num_scenarios,
            });
        }
        batch.validate(&self.schema)?;
        let st = &self.store;
        let pre = projected_first_layer(batch, &self.bottom_proj, bias(st, BOTTOM_FC, 0)?, |_, _| 1.0);
        let bottom = finish_stack(&self.config.bottom_fc, st, BOTTOM_FC, pre)?;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (r, &s) in batch.scenario_ids.iter().enumerate() {
            groups.entry(s).or_default().push(r);
        }
        let mut out = vec![0.0; batch.len()];
        for (s, rows) in groups {
            let logits = run_stack(&self.config.tower_fc, st, &tower_prefix(s), &bottom.select_rows(&rows))?;
            for (k, &r) in rows.iter().enumerate() {
                out[r] = sigmoid(logits.get(k, 0));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{random_batch, schema, scramble, tiny_settings};
    use crate::model::{FcSpec, HierRecSettings, SharedBottomSettings};

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn frozen_hierrec_matches_tape() {
        let deep = FcSpec {
            hidden: vec![4],
            activation: Activation::Tanh,
            use_batch_norm: true,
            ..FcSpec::default()
        };
        let variants = [
            tiny_settings(),
            HierRecSettings { ablate_multi_head: true, ..tiny_settings() },
            HierRecSettings { ablate_implicit: true, ..tiny_settings() },
            HierRecSettings { ablate_explicit: true, ..tiny_settings() },
            HierRecSettings {
                global_fc: FcSpec { hidden: vec![6], ..FcSpec::default().with_batch_norm() },
                explicit_condition_fc: deep.clone(),
                attention_fc: deep.clone(),
                implicit_condition_fc: deep,
                ..tiny_settings()
            },
        ];
        for (k, settings) in variants.iter().enumerate() {
            let s = schema(3);
            let mut m = HierRecModel::new(settings.resolve(3).unwrap(), s.clone(), k as u64).unwrap();
            scramble(m.params_mut(), 0.7, k as u64);
            let batch = random_batch(&s, 50, k as u64);
            assert_close(&FrozenHierRec::new(&m).unwrap().predict(&batch).unwrap(), &m.predict(&batch).unwrap());
        }
    }

    #[test]
    fn frozen_shared_bottom_matches_tape() {
        let s = schema(3);
        let settings = SharedBottomSettings {
            embedding_dim: 3,
            bottom: FcSpec { hidden: vec![5], ..FcSpec::default().with_batch_norm() },
            ..SharedBottomSettings::default()
        };
        let mut m = SharedBottomModel::new(settings.resolve(&s).unwrap(), s.clone(), 1).unwrap();
        scramble(m.params_mut(), 0.5, 2);
        let batch = random_batch(&s, 50, 3);
        assert_close(&FrozenSharedBottom::new(&m).unwrap().predict(&batch).unwrap(), &m.predict(&batch).unwrap());
    }
}
