//! Operation tape for reverse-mode differentiation.
//!
//! The tape records a forward pass as a flat list of nodes, each holding its
//! output value and the operation that produced it. [`Tape::backward`] walks
//! the list in reverse and accumulates gradients into the [`ParameterStore`]
//! entries the forward pass read from. The op set is exactly what the models
//! in this crate need: affine maps, batch norm, dropout, activations, grouped
//! softmax, per-slot feature scaling, and affine maps whose weights are read
//! from a per-row condition matrix (dynamic weights).

use std::collections::BTreeMap;

use super::ops::{bce_loss, sigmoid, softmax_in_place};
use super::params::ParameterStore;
use super::tensor::{axpy, dot, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// Location of one affine layer's weights (`out × in`, row-major) and bias
/// inside each row of a condition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSlot {
    pub w_offset: usize,
    pub b_offset: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseSlot {
    pub fn end(&self) -> usize {
        (self.w_offset + self.in_dim * self.out_dim).max(self.b_offset + self.out_dim)
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(String),
    Lookup {
        table: String,
        ids: Vec<usize>,
    },
    Concat(Vec<NodeId>),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Normalize {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Tensor2,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    Relu(NodeId),
    Tanh(NodeId),
    GroupSoftmax {
        x: NodeId,
        group: usize,
    },
    SlotScale {
        weights: NodeId,
        col_offset: usize,
        ec: NodeId,
        slot: usize,
    },
    DynamicAffine {
        h: NodeId,
        cond: NodeId,
        slot: DenseSlot,
    },
    SelectRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    ScatterRows(Vec<(NodeId, Vec<usize>)>),
    Sum(NodeId),
    BceWithLogits {
        logits: NodeId,
        labels: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Per-feature statistics of a train-mode batch norm, used by the caller to
/// update running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

fn shape_err(op: &str, msg: String) -> Error {
    Error::Shape(format!("{op}: {msg}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Reads a parameter; repeated reads of the same name share one node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store.value(name)?.clone();
        let id = self.push(value, Op::Param(name.to_owned()));
        self.params.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Row lookup into an embedding table (equivalent to one-hot × table).
    pub fn lookup(&mut self, store: &ParameterStore, table: &str, ids: &[usize]) -> Result<NodeId> {
        let t = store.value(table)?;
        let mut out = Tensor2::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(Error::Lookup {
                    field: table.to_owned(),
                    row: r,
                    index: id,
                    cardinality: t.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        Ok(self.push(
            out,
            Op::Lookup {
                table: table.to_owned(),
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err(
                    "concat",
                    format!("row count {} vs {rows}", v.rows()),
                ));
            }
            cols += v.cols();
        }
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut c = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c..c + src.len()].copy_from_slice(src);
                c += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// `x · wᵀ + b` with `w: out × in` and `b: 1 × out`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.cols() {
            return Err(shape_err(
                "affine",
                format!("input has {} columns, weight expects {}", xv.cols(), wv.cols()),
            ));
        }
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.rows() != 1 || bv.cols() != wv.rows() {
                return Err(shape_err(
                    "affine",
                    format!("bias {:?} for {} outputs", bv.shape(), wv.rows()),
                ));
            }
        }
        let out = xv.matmul_transposed(wv, b.map(|b| self.value(b).data()));
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    /// Batch norm with statistics of the current batch (biased variance).
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BatchStats)> {
        let xv = self.value(x);
        let (n, f) = xv.shape();
        if n == 0 {
            return Err(shape_err("batch_norm", "empty batch".into()));
        }
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for r in 0..n {
            axpy(1.0, xv.row(r), &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for r in 0..n {
            for (j, v) in xv.row(r).iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let id = self.normalize(x, gamma, beta, &mean, inv_std, true)?;
        Ok((id, BatchStats { mean, var }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_fixed(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.normalize(x, gamma, beta, mean, inv_std, false)
    }

    fn normalize(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let f = xv.cols();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.data().len() != f || b.data().len() != f || mean.len() != f {
            return Err(shape_err(
                "batch_norm",
                format!("{f} features vs gamma {:?} beta {:?}", g.shape(), b.shape()),
            ));
        }
        let mut xhat = xv.clone();
        for r in 0..xhat.rows() {
            for (j, v) in xhat.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = g.data()[j] * *v + b.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::Normalize {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Multiplies by a precomputed mask (already scaled by `1 / (1 − rate)`).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let xv = self.value(x);
        if mask.len() != xv.data().len() {
            return Err(shape_err("dropout", "mask length".into()));
        }
        let mut out = xv.clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Softmax over consecutive column groups of width `group` in every row.
    pub fn group_softmax(&mut self, x: NodeId, group: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if group == 0 || !xv.cols().is_multiple_of(group) {
            return Err(shape_err(
                "group_softmax",
                format!("{} columns not divisible into groups of {group}", xv.cols()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for chunk in out.row_mut(r).chunks_mut(group) {
                softmax_in_place(chunk);
            }
        }
        Ok(self.push(out, Op::GroupSoftmax { x, group }))
    }

    /// Scales each `slot`-wide block `i` of `ec` by `weights[:, col_offset + i]`.
    pub fn slot_scale(
        &mut self,
        weights: NodeId,
        col_offset: usize,
        ec: NodeId,
        slot: usize,
    ) -> Result<NodeId> {
        let (wv, ev) = (self.value(weights), self.value(ec));
        if slot == 0 || ev.cols() % slot != 0 {
            return Err(shape_err("slot_scale", format!("slot width {slot}")));
        }
        let fields = ev.cols() / slot;
        if wv.rows() != ev.rows() || col_offset + fields > wv.cols() {
            return Err(shape_err(
                "slot_scale",
                format!(
                    "weights {:?} cannot cover {fields} fields at offset {col_offset}",
                    wv.shape()
                ),
            ));
        }
        let mut out = ev.clone();
        for r in 0..out.rows() {
            let w = &wv.row(r)[col_offset..col_offset + fields];
            for (i, block) in out.row_mut(r).chunks_mut(slot).enumerate() {
                block.iter_mut().for_each(|v| *v *= w[i]);
            }
        }
        Ok(self.push(
            out,
            Op::SlotScale {
                weights,
                col_offset,
                ec,
                slot,
            },
        ))
    }

    /// Per-row affine map whose weights and bias are read from the same row
    /// of `cond` at the positions described by `slot`.
    pub fn dynamic_affine(&mut self, h: NodeId, cond: NodeId, slot: DenseSlot) -> Result<NodeId> {
        let (hv, cv) = (self.value(h), self.value(cond));
        if hv.cols() != slot.in_dim {
            return Err(shape_err(
                "dynamic_affine",
                format!("input has {} columns, layer expects {}", hv.cols(), slot.in_dim),
            ));
        }
        if hv.rows() != cv.rows() || cv.cols() < slot.end() {
            return Err(shape_err(
                "dynamic_affine",
                format!(
                    "condition {:?} cannot hold a {}x{} layer for {} rows",
                    cv.shape(),
                    slot.out_dim,
                    slot.in_dim,
                    hv.rows()
                ),
            ));
        }
        let mut out = Tensor2::zeros(hv.rows(), slot.out_dim);
        for r in 0..hv.rows() {
            let c = cv.row(r);
            let x = hv.row(r);
            for (o, v) in out.row_mut(r).iter_mut().enumerate() {
                let w = &c[slot.w_offset + o * slot.in_dim..slot.w_offset + (o + 1) * slot.in_dim];
                *v = dot(w, x) + c[slot.b_offset + o];
            }
        }
        Ok(self.push(out, Op::DynamicAffine { h, cond, slot }))
    }

    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(shape_err("select_rows", format!("row {bad} of {}", xv.rows())));
        }
        let out = xv.select_rows(rows);
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Inverse of a partition by [`Tape::select_rows`]: every output row must
    /// be covered exactly once.
    pub fn scatter_rows(&mut self, parts: Vec<(NodeId, Vec<usize>)>, total_rows: usize) -> Result<NodeId> {
        let cols = parts
            .first()
            .map_or(0, |(p, _)| self.value(*p).cols());
        let mut out = Tensor2::zeros(total_rows, cols);
        let mut seen = vec![false; total_rows];
        for (p, rows) in &parts {
            let v = self.value(*p);
            if v.cols() != cols || v.rows() != rows.len() {
                return Err(shape_err("scatter_rows", format!("part {:?}", v.shape())));
            }
            for (src, &dst) in rows.iter().enumerate() {
                if dst >= total_rows || seen[dst] {
                    return Err(shape_err("scatter_rows", format!("row {dst} not a partition")));
                }
                seen[dst] = true;
                out.row_mut(dst).copy_from_slice(v.row(src));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(shape_err("scatter_rows", "rows left uncovered".into()));
        }
        Ok(self.push(out, Op::ScatterRows(parts)))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor2::filled(1, 1, s), Op::Sum(x))
    }

    /// Mean BCE of `sigmoid(logits)` against `labels`; `logits` is `n × 1`.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.cols() != 1 || lv.rows() != labels.len() {
            return Err(shape_err(
                "bce",
                format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            ));
        }
        let probs: Vec<f64> = lv.data().iter().map(|&z| sigmoid(z)).collect();
        let loss = bce_loss(&probs, labels)?;
        Ok(self.push(
            Tensor2::filled(1, 1, loss),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Zeroes `store` gradients, then accumulates `d loss / d param` for every
    /// parameter read on this tape.
    pub fn backward(&self, loss: NodeId, store: &mut ParameterStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward: loss node not on this tape".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::State(format!(
                "backward: loss must be scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        store.zero_grads();
        let mut grads: Vec<Option<Tensor2>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => store.grad_mut(name)?.add_assign(&g),
                Op::Lookup { table, ids } => {
                    let tg = store.grad_mut(table)?;
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, g.row(r), tg.row_mut(id));
                    }
                }
                Op::Concat(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut pg = Tensor2::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            pg.row_mut(r).copy_from_slice(&g.row(r)[c..c + w]);
                        }
                        accumulate(&mut grads, p, pg);
                        c += w;
                    }
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    let mut dw = Tensor2::zeros(wv.rows(), wv.cols());
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let dxr = dx.row_mut(r);
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            axpy(go, wv.row(o), dxr);
                        }
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            axpy(go, xr, dw.row_mut(o));
                        }
                    }
                    if let Some(b) = b {
                        let mut db = Tensor2::zeros(1, wv.rows());
                        for r in 0..g.rows() {
                            axpy(1.0, g.row(r), db.data_mut());
                        }
                        accumulate(&mut grads, *b, db);
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::Normalize {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, f) = xhat.shape();
                    let gv = self.value(*gamma).data();
                    let mut dgamma = Tensor2::zeros(1, f);
                    let mut dbeta = Tensor2::zeros(1, f);
                    for r in 0..n {
                        for j in 0..f {
                            dgamma.data_mut()[j] += g.get(r, j) * xhat.get(r, j);
                            dbeta.data_mut()[j] += g.get(r, j);
                        }
                    }
                    let mut dx = Tensor2::zeros(n, f);
                    if *batch_stats {
                        // dx = inv_std / n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        let nf = n as f64;
                        for j in 0..f {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for r in 0..n {
                                let d = g.get(r, j) * gv[j];
                                s1 += d;
                                s2 += d * xhat.get(r, j);
                            }
                            for r in 0..n {
                                let d = g.get(r, j) * gv[j];
                                dx.set(r, j, inv_std[j] / nf * (nf * d - s1 - xhat.get(r, j) * s2));
                            }
                        }
                    } else {
                        for r in 0..n {
                            for j in 0..f {
                                dx.set(r, j, g.get(r, j) * gv[j] * inv_std[j]);
                            }
                        }
                    }
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (v, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let mut dx = g;
                    for (v, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *v *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GroupSoftmax { x, group } => {
                    let mut dx = g;
                    for r in 0..dx.rows() {
                        let yr = node.value.row(r);
                        for (dchunk, ychunk) in dx.row_mut(r).chunks_mut(*group).zip(yr.chunks(*group)) {
                            let s = dot(dchunk, ychunk);
                            for (d, y) in dchunk.iter_mut().zip(ychunk) {
                                *d = y * (*d - s);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SlotScale {
                    weights,
                    col_offset,
                    ec,
                    slot,
                } => {
                    let (wv, ev) = (self.value(*weights), self.value(*ec));
                    let mut dw = Tensor2::zeros(wv.rows(), wv.cols());
                    let mut dec = Tensor2::zeros(ev.rows(), ev.cols());
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let er = ev.row(r);
                        let w = wv.row(r);
                        for (i, (gb, eb)) in gr.chunks(*slot).zip(er.chunks(*slot)).enumerate() {
                            dw.row_mut(r)[col_offset + i] = dot(gb, eb);
                            let wi = w[col_offset + i];
                            for (k, d) in dec.row_mut(r)[i * slot..(i + 1) * slot].iter_mut().enumerate() {
                                *d = gb[k] * wi;
                            }
                        }
                    }
                    accumulate(&mut grads, *weights, dw);
                    accumulate(&mut grads, *ec, dec);
                }
                Op::DynamicAffine { h, cond, slot } => {
                    let (hv, cv) = (self.value(*h), self.value(*cond));
                    let mut dh = Tensor2::zeros(hv.rows(), hv.cols());
                    let mut dc = Tensor2::zeros(cv.rows(), cv.cols());
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let x = hv.row(r);
                        let c = cv.row(r);
                        let dcr = dc.row_mut(r);
                        for (o, &go) in gr.iter().enumerate() {
                            let w0 = slot.w_offset + o * slot.in_dim;
                            axpy(go, x, &mut dcr[w0..w0 + slot.in_dim]);
                            dcr[slot.b_offset + o] += go;
                        }
                        let dhr = dh.row_mut(r);
                        for (o, &go) in gr.iter().enumerate() {
                            let w0 = slot.w_offset + o * slot.in_dim;
                            axpy(go, &c[w0..w0 + slot.in_dim], dhr);
                        }
                    }
                    accumulate(&mut grads, *h, dh);
                    accumulate(&mut grads, *cond, dc);
                }
                Op::SelectRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for (src, &dst) in rows.iter().enumerate() {
                        axpy(1.0, g.row(src), dx.row_mut(dst));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ScatterRows(parts) => {
                    for (p, rows) in parts {
                        accumulate(&mut grads, *p, g.select_rows(rows));
                    }
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor2::filled(r, c, g.get(0, 0)));
                }
                Op::BceWithLogits {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len() as f64;
                    let up = g.get(0, 0);
                    let data = probs
                        .iter()
                        .zip(labels)
                        .map(|(p, y)| up * (p - y) / n)
                        .collect();
                    accumulate(
                        &mut grads,
                        *logits,
                        Tensor2::from_vec(labels.len(), 1, data)?,
                    );
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: NodeId, g: Tensor2) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(entries: &[(&str, Tensor2)]) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (n, t) in entries {
            s.insert(*n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn affine_sum_gradient_is_outer_product() {
        // y = W x, loss = sum(y) => dL/dW[o][i] = x[i]
        let w = Tensor2::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.5, 0.0, -0.5]]).unwrap();
        let mut store = store_with(&[("w", w)]);
        let mut tape = Tape::new();
        let x = tape.input(Tensor2::row_vector(vec![1.0, 2.0, -3.0]));
        let wid = tape.param(&store, "w").unwrap();
        let y = tape.affine(x, wid, None).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        let g = store.grad("w").unwrap();
        for o in 0..2 {
            assert_eq!(g.row(o), &[1.0, 2.0, -3.0]);
        }
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut store = store_with(&[("a", Tensor2::filled(1, 2, 1.0)), ("dead", Tensor2::filled(2, 2, 5.0))]);
        store.grad_mut("dead").unwrap().fill(9.0);
        let mut tape = Tape::new();
        let a = tape.param(&store, "a").unwrap();
        let loss = tape.sum(a);
        tape.backward(loss, &mut store).unwrap();
        assert!(store.grad("dead").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(store.grad("a").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut store = ParameterStore::new();
        let mut tape = Tape::new();
        let x = tape.input(Tensor2::zeros(2, 2));
        assert!(matches!(tape.backward(x, &mut store), Err(Error::State(_))));
        let empty = Tape::new();
        assert!(matches!(empty.backward(NodeId(0), &mut store), Err(Error::State(_))));
    }

    #[test]
    fn shared_param_reads_accumulate() {
        let mut store = store_with(&[("p", Tensor2::filled(1, 1, 2.0))]);
        let mut tape = Tape::new();
        let a = tape.param(&store, "p").unwrap();
        let b = tape.param(&store, "p").unwrap();
        assert_eq!(a, b);
        let c = tape.concat(&[a, b]).unwrap();
        let loss = tape.sum(c);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("p").unwrap().get(0, 0), 2.0);
    }

    #[test]
    fn scatter_requires_partition() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor2::zeros(1, 2));
        assert!(tape.scatter_rows(vec![(a, vec![0])], 2).is_err());
        let b = tape.input(Tensor2::zeros(1, 2));
        assert!(tape.scatter_rows(vec![(a, vec![1]), (b, vec![1])], 2).is_err());
        assert!(tape.scatter_rows(vec![(a, vec![1]), (b, vec![0])], 2).is_ok());
    }
}
