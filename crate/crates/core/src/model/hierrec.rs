use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{embed_common, CtrModel, ModelKind, Recorded};
use crate::data::{Batch, FeatureSchema};
use crate::dynamic::{DynamicShape, ScenarioCondition};
use crate::error::{Error, Result, StageExt};
use crate::nn::{
    declare_fc_stack, normal_init, record_fc_stack, sigmoid, Activation, FcStackConfig, Mode, NodeId,
    ParameterStore, Tape, Tensor2,
};
use crate::seed;

pub(crate) const SCENARIO_TABLE: &str = "emb.scenario";
pub(crate) const GLOBAL_FC: &str = "global_fc";
pub(crate) const EXPLICIT_FC: &str = "explicit_fc";
pub(crate) const EXPLICIT_PROJ: &str = "explicit_proj";
pub(crate) const ATTENTION_FC: &str = "attention_fc";
pub(crate) const IMPLICIT_FC: &str = "implicit_fc";
pub(crate) const OUTPUT: &str = "output";

pub(crate) const EMBEDDING_INIT_STD: f64 = 0.01;

fn default_momentum() -> f64 {
    0.9
}

/// FC stack settings without the input and output widths, which the model
/// derives from the schema and the surrounding dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcSpec {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub use_batch_norm: bool,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for FcSpec {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            activation: Activation::Relu,
            dropout_rate: 0.0,
            use_batch_norm: false,
            bn_momentum: default_momentum(),
        }
    }
}

impl FcSpec {
    pub fn with_batch_norm(mut self) -> Self {
        self.use_batch_norm = true;
        self
    }

    pub fn stack(&self, input: usize, output: usize, linear_output: bool) -> FcStackConfig {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(output);
        FcStackConfig {
            layer_sizes: sizes,
            activation: self.activation,
            dropout_rate: self.dropout_rate,
            use_batch_norm: self.use_batch_norm,
            bn_momentum: self.bn_momentum,
            linear_output,
        }
    }
}

/// User-facing HierRec settings; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierRecSettings {
    pub embedding_dim: usize,
    pub num_heads: usize,
    pub global_dim: usize,
    pub explicit_out_dim: usize,
    pub implicit_out_dim: usize,
    pub bottleneck_r: usize,
    pub global_fc: FcSpec,
    pub explicit_condition_fc: FcSpec,
    pub attention_fc: FcSpec,
    pub implicit_condition_fc: FcSpec,
    pub ablate_multi_head: bool,
    pub ablate_implicit: bool,
    pub ablate_explicit: bool,
}

impl Default for HierRecSettings {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            num_heads: 4,
            global_dim: 64,
            explicit_out_dim: 64,
            implicit_out_dim: 32,
            bottleneck_r: 16,
            global_fc: FcSpec::default().with_batch_norm(),
            explicit_condition_fc: FcSpec::default(),
            attention_fc: FcSpec::default(),
            implicit_condition_fc: FcSpec::default(),
            ablate_multi_head: false,
            ablate_implicit: false,
            ablate_explicit: false,
        }
    }
}

impl HierRecSettings {
    /// Full configuration for a schema with `num_fields` common features.
    /// Condition and attention stacks end in a plain affine layer.
    pub fn resolve(&self, num_fields: usize) -> Result<HierRecConfig> {
        let d = self.embedding_dim;
        let heads = if self.ablate_multi_head { 1 } else { self.num_heads };
        let r = self.bottleneck_r;
        let explicit_len = self.global_dim * r + r + r * self.explicit_out_dim + self.explicit_out_dim;
        let implicit_len = self.explicit_out_dim * r + r + r * self.implicit_out_dim + self.implicit_out_dim;
        let cfg = HierRecConfig {
            embedding_dim: d,
            num_heads: self.num_heads,
            global_dim: self.global_dim,
            explicit_out_dim: self.explicit_out_dim,
            implicit_out_dim: self.implicit_out_dim,
            bottleneck_r: r,
            explicit_condition_fc: self.explicit_condition_fc.stack(d, explicit_len, true),
            attention_fc: self.attention_fc.stack(d, heads * num_fields, true),
            implicit_condition_fc: self.implicit_condition_fc.stack(num_fields * d, implicit_len, true),
            global_fc: self.global_fc.stack(num_fields * d, self.global_dim, false),
            ablate_multi_head: self.ablate_multi_head,
            ablate_implicit: self.ablate_implicit,
            ablate_explicit: self.ablate_explicit,
        };
        cfg.validate(num_fields)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierRecConfig {
    pub embedding_dim: usize,
    pub num_heads: usize,
    pub global_dim: usize,
    pub explicit_out_dim: usize,
    pub implicit_out_dim: usize,
    pub bottleneck_r: usize,
    pub explicit_condition_fc: FcStackConfig,
    pub attention_fc: FcStackConfig,
    pub implicit_condition_fc: FcStackConfig,
    pub global_fc: FcStackConfig,
    pub ablate_multi_head: bool,
    pub ablate_implicit: bool,
    pub ablate_explicit: bool,
}

fn check_stack(name: &str, cfg: &FcStackConfig, input: usize, output: usize) -> Result<()> {
    cfg.validate(name)?;
    if cfg.input_dim() != input || cfg.output_dim() != output {
        return Err(Error::Config(format!(
            "`{name}` maps {} -> {}, expected {input} -> {output}",
            cfg.input_dim(),
            cfg.output_dim()
        )));
    }
    Ok(())
}

impl HierRecConfig {
    pub fn effective_heads(&self) -> usize {
        if self.ablate_multi_head {
            1
        } else {
            self.num_heads
        }
    }

    pub fn explicit_shape(&self) -> Result<DynamicShape> {
        DynamicShape::new(self.global_dim, self.bottleneck_r, self.explicit_out_dim)
    }

    pub fn implicit_shape(&self) -> Result<DynamicShape> {
        DynamicShape::new(self.explicit_out_dim, self.bottleneck_r, self.implicit_out_dim)
    }

    /// Width of the vector fed to the output layer.
    pub fn head_width(&self) -> usize {
        if self.ablate_implicit {
            self.explicit_out_dim
        } else {
            self.effective_heads() * self.implicit_out_dim
        }
    }

    pub fn validate(&self, num_fields: usize) -> Result<()> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("num_heads", self.num_heads),
            ("global_dim", self.global_dim),
            ("explicit_out_dim", self.explicit_out_dim),
            ("implicit_out_dim", self.implicit_out_dim),
            ("bottleneck_r", self.bottleneck_r),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if num_fields == 0 {
            return Err(Error::Config("at least one common feature is required".into()));
        }
        let d = self.embedding_dim;
        check_stack(GLOBAL_FC, &self.global_fc, num_fields * d, self.global_dim)?;
        if !self.ablate_explicit {
            let len = self.explicit_shape()?.condition_length();
            check_stack("explicit_condition_fc", &self.explicit_condition_fc, d, len)?;
        }
        if !self.ablate_implicit {
            let heads = self.effective_heads();
            check_stack(ATTENTION_FC, &self.attention_fc, d, heads * num_fields)?;
            let len = self.implicit_shape()?.condition_length();
            check_stack("implicit_condition_fc", &self.implicit_condition_fc, num_fields * d, len)?;
        }
        Ok(())
    }

    /// Trainable scalar count, in closed form.
    pub fn param_count(&self, schema: &FeatureSchema) -> usize {
        let d = self.embedding_dim;
        let embeddings = d * (schema.scenario_cardinality + schema.common_cardinalities.iter().sum::<usize>());
        let explicit = if self.ablate_explicit {
            self.explicit_out_dim * self.global_dim + self.explicit_out_dim
        } else {
            self.explicit_condition_fc.scalar_count()
        };
        let implicit = if self.ablate_implicit {
            0
        } else {
            self.attention_fc.scalar_count() + self.implicit_condition_fc.scalar_count()
        };
        embeddings + self.global_fc.scalar_count() + explicit + implicit + self.head_width() + 1
    }
}

/// Per-sample condition vectors of one dynamic layer set, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBatch {
    pub values: Tensor2,
    pub shape: DynamicShape,
}

impl ConditionBatch {
    pub fn condition(&self, row: usize) -> Result<ScenarioCondition> {
        ScenarioCondition::new(self.values.row(row).to_vec(), self.shape)
    }
}

/// Every intermediate of one forward pass. Attention tensors are
/// `batch × (G·I)`, head-major within a row.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub o_global: Tensor2,
    pub sc_explicit: Option<ConditionBatch>,
    pub o_explicit: Tensor2,
    pub weight_ori: Option<Tensor2>,
    pub weight_norm: Option<Tensor2>,
    pub ie: Vec<Tensor2>,
    pub sc_implicit: Vec<ConditionBatch>,
    pub o_implicit: Vec<Tensor2>,
    pub logits: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl ForwardTrace {
    pub fn num_heads(&self) -> usize {
        self.sc_implicit.len()
    }
}

struct TraceNodes {
    o_global: NodeId,
    sc_explicit: Option<NodeId>,
    o_explicit: NodeId,
    weight_ori: Option<NodeId>,
    weight_norm: Option<NodeId>,
    ie: Vec<NodeId>,
    sc_implicit: Vec<NodeId>,
    o_implicit: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct HierRecModel {
    config: HierRecConfig,
    schema: FeatureSchema,
    params: ParameterStore,
}

impl HierRecModel {
    /// Builds and initializes a model: Glorot-uniform weights, zero biases,
    /// `N(0, 0.01²)` embeddings. Each tensor's draw depends only on `seed` and
    /// its name.
    pub fn new(config: HierRecConfig, schema: FeatureSchema, seed: u64) -> Result<Self> {
        schema.validate()?;
        config.validate(schema.num_common())?;
        let mut params = ParameterStore::new();
        let d = config.embedding_dim;
        let mut rng = seed::rng(seed, &[seed::name_id(SCENARIO_TABLE)]);
        params.insert(SCENARIO_TABLE, normal_init(&mut rng, schema.scenario_cardinality, d, EMBEDDING_INIT_STD))?;
        for (i, &card) in schema.common_cardinalities.iter().enumerate() {
            let name = super::common_table(i);
            let mut rng = seed::rng(seed, &[seed::name_id(&name)]);
            params.insert(name, normal_init(&mut rng, card, d, EMBEDDING_INIT_STD))?;
        }
        let proj = FcStackConfig::new(vec![config.global_dim, config.explicit_out_dim], Activation::Identity)
            .with_linear_output(true);
        let head = FcStackConfig::new(vec![config.head_width(), 1], Activation::Identity).with_linear_output(true);
        let mut stacks = vec![(&config.global_fc, GLOBAL_FC)];
        if config.ablate_explicit {
            stacks.push((&proj, EXPLICIT_PROJ));
        } else {
            stacks.push((&config.explicit_condition_fc, EXPLICIT_FC));
        }
        if !config.ablate_implicit {
            stacks.push((&config.attention_fc, ATTENTION_FC));
            stacks.push((&config.implicit_condition_fc, IMPLICIT_FC));
        }
        stacks.push((&head, OUTPUT));
        for (cfg, prefix) in stacks {
            let mut rng = seed::rng(seed, &[seed::name_id(prefix)]);
            declare_fc_stack(cfg, &mut params, prefix, &mut rng)?;
        }
        Ok(Self { config, schema, params })
    }

    /// Wraps loaded parameters after checking names and shapes against a
    /// freshly built model.
    pub fn from_params(config: HierRecConfig, schema: FeatureSchema, params: ParameterStore) -> Result<Self> {
        let template = Self::new(config, schema, 0)?;
        super::check_same_layout(&template.params, &params)?;
        Ok(Self { params, ..template })
    }

    pub fn config(&self) -> &HierRecConfig {
        &self.config
    }

    /// Eval-mode forward pass with all intermediates.
    pub fn trace(&self, batch: &Batch) -> Result<ForwardTrace> {
        self.trace_with(&self.params, batch, Mode::Eval, 0)
    }

    pub fn trace_with(
        &self,
        store: &ParameterStore,
        batch: &Batch,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let (rec, nodes) = self.record_full(store, &mut tape, batch, mode, dropout_seed)?;
        let v = |id: NodeId| tape.value(id).clone();
        let explicit_shape = self.config.explicit_shape()?;
        let implicit_shape = self.config.implicit_shape()?;
        let logits = tape.value(rec.logits).data().to_vec();
        Ok(ForwardTrace {
            o_global: v(nodes.o_global),
            sc_explicit: nodes.sc_explicit.map(|id| ConditionBatch {
                values: v(id),
                shape: explicit_shape,
            }),
            o_explicit: v(nodes.o_explicit),
            weight_ori: nodes.weight_ori.map(v),
            weight_norm: nodes.weight_norm.map(v),
            ie: nodes.ie.into_iter().map(v).collect(),
            sc_implicit: nodes
                .sc_implicit
                .into_iter()
                .map(|id| ConditionBatch {
                    values: v(id),
                    shape: implicit_shape,
                })
                .collect(),
            o_implicit: nodes.o_implicit.into_iter().map(v).collect(),
            y_hat: logits.iter().map(|&z| sigmoid(z)).collect(),
            logits,
        })
    }

    /// Eval-mode attention for one scenario: `(weight_ori, weight_norm)`, each
    /// `G × I`.
    pub fn attention_weights(&self, scenario: usize) -> Result<(Tensor2, Tensor2)> {
        if self.config.ablate_implicit {
            return Err(Error::Config("model has no implicit attention".into()));
        }
        let fields = self.schema.num_common();
        let heads = self.config.effective_heads();
        let mut tape = Tape::new();
        let e_s = tape.lookup(&self.params, SCENARIO_TABLE, &[scenario]).map_err(|_| Error::Lookup {
            field: self.schema.scenario_field.clone(),
            row: 0,
            index: scenario,
            cardinality: self.schema.scenario_cardinality,
        })?;
        let (raw, _) = record_fc_stack(&self.config.attention_fc, &mut tape, &self.params, ATTENTION_FC, e_s, Mode::Eval, 0)?;
        let norm = tape.group_softmax(raw, fields)?;
        let reshape = |id: NodeId| Tensor2::from_vec(heads, fields, tape.value(id).data().to_vec());
        Ok((reshape(raw)?, reshape(norm)?))
    }

    fn record_full(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        batch: &Batch,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(Recorded, TraceNodes)> {
        let cfg = &self.config;
        let fields = self.schema.num_common();
        let d = cfg.embedding_dim;
        let mut bn_updates = Vec::new();

        batch.validate(&self.schema).stage("embed")?;
        let e_s = tape.lookup(store, SCENARIO_TABLE, &batch.scenario_ids).stage("embed")?;
        let e_c = embed_common(store, tape, batch).stage("embed")?;

        let (o_global, up) = record_fc_stack(&cfg.global_fc, tape, store, GLOBAL_FC, e_c, mode, dropout_seed)
            .stage("global_representation")?;
        bn_updates.extend(up);

        let (sc_explicit, o_explicit) = if cfg.ablate_explicit {
            let w = tape.param(store, &format!("{EXPLICIT_PROJ}.0.weight"))?;
            let b = tape.param(store, &format!("{EXPLICIT_PROJ}.0.bias"))?;
            (None, tape.affine(o_global, w, Some(b)).stage("explicit_projection")?)
        } else {
            let (sc, up) = record_fc_stack(&cfg.explicit_condition_fc, tape, store, EXPLICIT_FC, e_s, mode, dropout_seed)
                .stage("explicit_condition")?;
            bn_updates.extend(up);
            let shape = cfg.explicit_shape()?;
            let mid = tape.dynamic_affine(o_global, sc, shape.bottleneck_slot()).stage("explicit_layer")?;
            let out = tape.dynamic_affine(mid, sc, shape.output_slot()).stage("explicit_layer")?;
            (Some(sc), out)
        };

        let mut nodes = TraceNodes {
            o_global,
            sc_explicit,
            o_explicit,
            weight_ori: None,
            weight_norm: None,
            ie: Vec::new(),
            sc_implicit: Vec::new(),
            o_implicit: Vec::new(),
        };

        let head_input = if cfg.ablate_implicit {
            o_explicit
        } else {
            let (raw, up) = record_fc_stack(&cfg.attention_fc, tape, store, ATTENTION_FC, e_s, mode, dropout_seed)
                .stage("implicit_attention")?;
            bn_updates.extend(up);
            let norm = tape.group_softmax(raw, fields).stage("implicit_attention")?;
            nodes.weight_ori = Some(raw);
            nodes.weight_norm = Some(norm);
            let shape = cfg.implicit_shape()?;
            for g in 0..cfg.effective_heads() {
                let ie = tape.slot_scale(norm, g * fields, e_c, d).stage("implicit_representation")?;
                let head_seed = seed::derive(dropout_seed, &[g as u64]);
                let (sc, up) = record_fc_stack(&cfg.implicit_condition_fc, tape, store, IMPLICIT_FC, ie, mode, head_seed)
                    .stage("implicit_conditions")?;
                bn_updates.extend(up);
                let mid = tape.dynamic_affine(o_explicit, sc, shape.bottleneck_slot()).stage("implicit_layer")?;
                let out = tape.dynamic_affine(mid, sc, shape.output_slot()).stage("implicit_layer")?;
                nodes.ie.push(ie);
                nodes.sc_implicit.push(sc);
                nodes.o_implicit.push(out);
            }
            tape.concat(&nodes.o_implicit).stage("output")?
        };

        let w = tape.param(store, &format!("{OUTPUT}.0.weight"))?;
        let b = tape.param(store, &format!("{OUTPUT}.0.bias"))?;
        let logits = tape.affine(head_input, w, Some(b)).stage("output")?;
        Ok((Recorded { logits, bn_updates }, nodes))
    }
}

impl CtrModel for HierRecModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Hierrec
    }

    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn params(&self) -> &ParameterStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn record(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        batch: &Batch,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Recorded> {
        self.record_full(store, tape, batch, mode, dropout_seed).map(|(rec, _)| rec)
    }
}

/// Writes `scenario_id,head,feature,weight` rows: the eval-mode normalized
/// attention of every head over every common feature, for every scenario.
pub fn export_attention_weights(model: &HierRecModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "scenario_id,head,feature,weight").map_err(io)?;
    let fields = &model.schema.common_fields;
    for s in 0..model.schema.scenario_cardinality {
        let (_, norm) = model.attention_weights(s)?;
        for g in 0..norm.rows() {
            for (i, name) in fields.iter().enumerate() {
                writeln!(w, "{s},{g},{name},{}", norm.get(g, i)).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}
