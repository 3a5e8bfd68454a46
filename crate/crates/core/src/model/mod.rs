//! Models share one contract: record a forward pass on a [`Tape`] against a
//! given parameter store. Training, gradient checking and scoring are written
//! once on top of that.

mod frozen;
mod hierrec;
mod shared_bottom;
#[cfg(test)]
pub(crate) mod testutil;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::nn::{
    apply_bn_updates, grad_check, sigmoid, BnUpdate, GradCheckOptions, GradCheckReport, Mode, NodeId,
    ParameterStore, Tape,
};

pub use frozen::{FrozenHierRec, FrozenSharedBottom};
pub use hierrec::{
    export_attention_weights, ConditionBatch, FcSpec, ForwardTrace, HierRecConfig, HierRecModel,
    HierRecSettings,
};
pub use shared_bottom::{SharedBottomConfig, SharedBottomModel, SharedBottomSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hierrec,
    SharedBottom,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hierrec => "hierrec",
            ModelKind::SharedBottom => "shared_bottom",
        }
    }
}

/// Output of recording one forward pass.
#[derive(Debug)]
pub struct Recorded {
    /// `batch × 1` pre-sigmoid scores.
    pub logits: NodeId,
    /// Running-statistics updates to apply if the step is kept (train mode).
    pub bn_updates: Vec<BnUpdate>,
}

pub trait CtrModel: Sync {
    fn kind(&self) -> ModelKind;
    fn schema(&self) -> &FeatureSchema;
    fn params(&self) -> &ParameterStore;
    fn params_mut(&mut self) -> &mut ParameterStore;

    /// Records the forward pass reading parameters from `store`, which must
    /// hold the same names and shapes as [`CtrModel::params`].
    fn record(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        batch: &Batch,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Recorded>;

    /// Eval-mode click probabilities.
    fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let rec = self.record(self.params(), &mut tape, batch, Mode::Eval, 0)?;
        Ok(tape.value(rec.logits).data().iter().map(|&z| sigmoid(z)).collect())
    }
}

/// Mean BCE of the model under `store`.
pub fn batch_loss<M: CtrModel + ?Sized>(
    model: &M,
    store: &ParameterStore,
    batch: &Batch,
    mode: Mode,
    dropout_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let rec = model.record(store, &mut tape, batch, mode, dropout_seed)?;
    let loss = tape.bce_with_logits(rec.logits, &batch.labels)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Train-mode forward and backward. Gradients land in the model's store and
/// batch-norm running statistics are updated. A non-finite loss is returned
/// without touching gradients or statistics.
pub fn train_step<M: CtrModel + ?Sized>(model: &mut M, batch: &Batch, dropout_seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let rec = model.record(model.params(), &mut tape, batch, Mode::Train, dropout_seed)?;
    let loss_node = tape.bce_with_logits(rec.logits, &batch.labels)?;
    let loss = tape.value(loss_node).get(0, 0);
    if !loss.is_finite() {
        return Ok(loss);
    }
    tape.backward(loss_node, model.params_mut())?;
    apply_bn_updates(model.params_mut(), &rec.bn_updates)?;
    Ok(loss)
}

/// Finite-difference check of the eval-mode loss gradient on `batch`.
pub fn check_gradients<M: CtrModel + ?Sized>(
    model: &M,
    batch: &Batch,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut store = model.params().clone();
    grad_check(
        &mut store,
        |s| batch_loss(model, s, batch, Mode::Eval, 0),
        |s| {
            let mut tape = Tape::new();
            let rec = model.record(s, &mut tape, batch, Mode::Eval, 0)?;
            let loss = tape.bce_with_logits(rec.logits, &batch.labels)?;
            tape.backward(loss, s)
        },
        opts,
    )
}

/// Scores a whole dataset in eval mode, chunked and in parallel; output order
/// follows the dataset.
pub fn predict_dataset<M: CtrModel + ?Sized>(model: &M, ds: &Dataset, chunk: usize) -> Result<Vec<f64>> {
    let chunk = chunk.max(1);
    let fields = ds.schema().num_common();
    let parts = ds
        .samples()
        .par_chunks(chunk)
        .map(|s| model.predict(&Batch::from_samples(s, fields)))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

pub(crate) fn common_table(field: usize) -> String {
    format!("emb.common.{field}")
}

/// `E_c`: the per-field embedding rows concatenated in field order.
pub(crate) fn embed_common(store: &ParameterStore, tape: &mut Tape, batch: &Batch) -> Result<NodeId> {
    let parts = (0..batch.num_fields)
        .map(|i| tape.lookup(store, &common_table(i), &batch.field_column(i)))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&parts)
}

/// Errors unless both stores hold the same parameter and buffer names with
/// the same shapes.
pub(crate) fn check_same_layout(expected: &ParameterStore, got: &ParameterStore) -> Result<()> {
    let shapes = |s: &ParameterStore| -> Vec<(String, (usize, usize))> {
        s.iter()
            .map(|(n, e)| (n.to_owned(), e.value.shape()))
            .chain(s.buffers().map(|(n, t)| (format!("buffer {n}"), t.shape())))
            .collect()
    };
    let (want, have) = (shapes(expected), shapes(got));
    if want == have {
        return Ok(());
    }
    let missing = want.iter().find(|w| !have.contains(w));
    let extra = have.iter().find(|h| !want.contains(h));
    Err(Error::Integrity(format!(
        "parameter layout mismatch (first missing: {missing:?}, first unexpected: {extra:?})"
    )))
}

/// A model of either kind, as loaded from a checkpoint.
#[derive(Debug, Clone)]
pub enum AnyModel {
    HierRec(HierRecModel),
    SharedBottom(SharedBottomModel),
}

impl AnyModel {
    fn inner(&self) -> &dyn CtrModel {
        match self {
            AnyModel::HierRec(m) => m,
            AnyModel::SharedBottom(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn CtrModel {
        match self {
            AnyModel::HierRec(m) => m,
            AnyModel::SharedBottom(m) => m,
        }
    }

    /// Inference-only form of this model.
    pub fn freeze(&self) -> Result<Frozen> {
        Ok(match self {
            AnyModel::HierRec(m) => Frozen::HierRec(FrozenHierRec::new(m)?),
            AnyModel::SharedBottom(m) => Frozen::SharedBottom(FrozenSharedBottom::new(m)?),
        })
    }
}

impl From<HierRecModel> for AnyModel {
    fn from(m: HierRecModel) -> Self {
        AnyModel::HierRec(m)
    }
}

impl From<SharedBottomModel> for AnyModel {
    fn from(m: SharedBottomModel) -> Self {
        AnyModel::SharedBottom(m)
    }
}

impl CtrModel for AnyModel {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn schema(&self) -> &FeatureSchema {
        self.inner().schema()
    }

    fn params(&self) -> &ParameterStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        self.inner_mut().params_mut()
    }

    fn record(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        batch: &Batch,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Recorded> {
        self.inner().record(store, tape, batch, mode, dropout_seed)
    }
}

/// Inference-only model of either kind.
#[derive(Debug, Clone)]
pub enum Frozen {
    HierRec(FrozenHierRec),
    SharedBottom(FrozenSharedBottom),
}

impl Frozen {
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        match self {
            Frozen::HierRec(m) => m.predict(batch),
            Frozen::SharedBottom(m) => m.predict(batch),
        }
    }

    /// Scores `ds` in dataset order, chunked and in parallel.
    pub fn predict_dataset(&self, ds: &Dataset, chunk: usize) -> Result<Vec<f64>> {
        let fields = ds.schema().num_common();
        let parts = ds
            .samples()
            .par_chunks(chunk.max(1))
            .map(|s| self.predict(&Batch::from_samples(s, fields)))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.concat())
    }
}
