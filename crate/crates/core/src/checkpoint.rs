//! JSON checkpoints: config, schema, optional vocabulary, and every tensor
//! stored as 32-bit floats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{FeatureSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{AnyModel, CtrModel, HierRecConfig, HierRecModel, ModelKind, SharedBottomConfig, SharedBottomModel};
use crate::nn::{ParameterStore, Tensor2};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl TensorRecord {
    fn from_tensor(t: &Tensor2) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    fn to_tensor(&self, name: &str) -> Result<Tensor2> {
        if self.values.len() != self.rows * self.cols {
            return Err(Error::Integrity(format!(
                "tensor `{name}` declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.values.len()
            )));
        }
        Tensor2::from_vec(self.rows, self.cols, self.values.iter().map(|&v| f64::from(v)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u64,
    model_kind: ModelKind,
    config: Value,
    schema: FeatureSchema,
    #[serde(default)]
    vocab: Option<Vocabulary>,
    tensors: BTreeMap<String, TensorRecord>,
    #[serde(default)]
    buffers: BTreeMap<String, TensorRecord>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub vocab: Option<Vocabulary>,
}

/// The serialized form. Identical models produce identical bytes.
pub fn checkpoint_json(model: &AnyModel, vocab: Option<&Vocabulary>) -> Result<String> {
    let config = match model {
        AnyModel::HierRec(m) => serde_json::to_value(m.config())?,
        AnyModel::SharedBottom(m) => serde_json::to_value(m.config())?,
    };
    let params = model.params();
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        model_kind: model.kind(),
        config,
        schema: model.schema().clone(),
        vocab: vocab.cloned(),
        tensors: params
            .iter()
            .map(|(n, e)| (n.to_owned(), TensorRecord::from_tensor(&e.value)))
            .collect(),
        buffers: params
            .buffers()
            .map(|(n, t)| (n.to_owned(), TensorRecord::from_tensor(t)))
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_checkpoint(model: &AnyModel, vocab: Option<&Vocabulary>, path: &Path) -> Result<()> {
    let json = checkpoint_json(model, vocab)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))?;
    let version = doc
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Integrity("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: vec![FORMAT_VERSION],
        });
    }
    let file: CheckpointFile =
        serde_json::from_value(doc).map_err(|e| Error::Integrity(format!("malformed checkpoint: {e}")))?;
    let mut params = ParameterStore::new();
    for (name, rec) in &file.tensors {
        params.insert(name.clone(), rec.to_tensor(name)?)?;
    }
    for (name, rec) in &file.buffers {
        params.insert_buffer(name.clone(), rec.to_tensor(name)?)?;
    }
    let bad_config = |e: serde_json::Error| Error::Integrity(format!("malformed config: {e}"));
    let model = match file.model_kind {
        ModelKind::Hierrec => {
            let cfg: HierRecConfig = serde_json::from_value(file.config).map_err(bad_config)?;
            HierRecModel::from_params(cfg, file.schema, params)?.into()
        }
        ModelKind::SharedBottom => {
            let cfg: SharedBottomConfig = serde_json::from_value(file.config).map_err(bad_config)?;
            SharedBottomModel::from_params(cfg, file.schema, params)?.into()
        }
    };
    Ok(Checkpoint {
        model,
        vocab: file.vocab,
    })
}
