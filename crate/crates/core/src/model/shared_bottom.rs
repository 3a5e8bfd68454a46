use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hierrec::{FcSpec, EMBEDDING_INIT_STD};
use super::{common_table, embed_common, CtrModel, ModelKind, Recorded};
use crate::data::{Batch, FeatureSchema};
use crate::error::{Error, Result, StageExt};
use crate::nn::{declare_fc_stack, normal_init, record_fc_stack, FcStackConfig, Mode, ParameterStore, Tape};
use crate::seed;

pub(crate) const BOTTOM_FC: &str = "bottom_fc";

pub(crate) fn tower_prefix(scenario: usize) -> String {
    format!("tower.{scenario}")
}

/// User-facing Shared Bottom settings. The defaults match HierRec's default
/// hidden widths: a 64-wide bottom in two layers and a 128-wide tower layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharedBottomSettings {
    pub embedding_dim: usize,
    pub bottom: FcSpec,
    pub bottom_out_dim: usize,
    pub tower: FcSpec,
}

impl Default for SharedBottomSettings {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            bottom: FcSpec {
                hidden: vec![64],
                ..FcSpec::default()
            },
            bottom_out_dim: 64,
            tower: FcSpec {
                hidden: vec![128],
                ..FcSpec::default()
            },
        }
    }
}

impl SharedBottomSettings {
    pub fn resolve(&self, schema: &FeatureSchema) -> Result<SharedBottomConfig> {
        let cfg = SharedBottomConfig {
            embedding_dim: self.embedding_dim,
            bottom_fc: self.bottom.stack(schema.num_common() * self.embedding_dim, self.bottom_out_dim, false),
            tower_fc: self.tower.stack(self.bottom_out_dim, 1, true),
            num_scenarios: schema.scenario_cardinality,
        };
        cfg.validate(schema.num_common())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedBottomConfig {
    pub embedding_dim: usize,
    pub bottom_fc: FcStackConfig,
    /// Replicated once per scenario.
    pub tower_fc: FcStackConfig,
    pub num_scenarios: usize,
}

impl SharedBottomConfig {
    pub fn validate(&self, num_fields: usize) -> Result<()> {
        if self.embedding_dim == 0 || self.num_scenarios == 0 {
            return Err(Error::Config("embedding_dim and num_scenarios must be at least 1".into()));
        }
        self.bottom_fc.validate(BOTTOM_FC)?;
        self.tower_fc.validate("tower_fc")?;
        if self.bottom_fc.input_dim() != num_fields * self.embedding_dim {
            return Err(Error::Config(format!(
                "`bottom_fc` input {} != {num_fields} fields x {}",
                self.bottom_fc.input_dim(),
                self.embedding_dim
            )));
        }
        if self.tower_fc.input_dim() != self.bottom_fc.output_dim() || self.tower_fc.output_dim() != 1 {
            return Err(Error::Config(format!(
                "`tower_fc` must map {} -> 1, got {:?}",
                self.bottom_fc.output_dim(),
                self.tower_fc.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn param_count(&self, schema: &FeatureSchema) -> usize {
        self.embedding_dim * schema.common_cardinalities.iter().sum::<usize>()
            + self.bottom_fc.scalar_count()
            + self.num_scenarios * self.tower_fc.scalar_count()
    }
}

#[derive(Debug, Clone)]
pub struct SharedBottomModel {
    config: SharedBottomConfig,
    schema: FeatureSchema,
    params: ParameterStore,
}

impl SharedBottomModel {
    pub fn new(config: SharedBottomConfig, schema: FeatureSchema, seed: u64) -> Result<Self> {
        schema.validate()?;
        config.validate(schema.num_common())?;
        let mut params = ParameterStore::new();
        for (i, &card) in schema.common_cardinalities.iter().enumerate() {
            let name = common_table(i);
            let mut rng = seed::rng(seed, &[seed::name_id(&name)]);
            params.insert(name, normal_init(&mut rng, card, config.embedding_dim, EMBEDDING_INIT_STD))?;
        }
        let mut rng = seed::rng(seed, &[seed::name_id(BOTTOM_FC)]);
        declare_fc_stack(&config.bottom_fc, &mut params, BOTTOM_FC, &mut rng)?;
        for s in 0..config.num_scenarios {
            let prefix = tower_prefix(s);
            let mut rng = seed::rng(seed, &[seed::name_id(&prefix)]);
            declare_fc_stack(&config.tower_fc, &mut params, &prefix, &mut rng)?;
        }
        Ok(Self { config, schema, params })
    }

    pub fn from_params(config: SharedBottomConfig, schema: FeatureSchema, params: ParameterStore) -> Result<Self> {
        let template = Self::new(config, schema, 0)?;
        super::check_same_layout(&template.params, &params)?;
        Ok(Self { params, ..template })
    }

    pub fn config(&self) -> &SharedBottomConfig {
        &self.config
    }
}

impl CtrModel for SharedBottomModel {
    fn kind(&self) -> ModelKind {
        ModelKind::SharedBottom
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
        let n = self.config.num_scenarios;
        if let Some(&s) = batch.scenario_ids.iter().find(|&&s| s >= n) {
            return Err(Error::Routing {
                scenario: s,
                num_scenarios: n,
            });
        }
        batch.validate(&self.schema).stage("embed")?;
        let e_c = embed_common(store, tape, batch).stage("embed")?;
        let (bottom, mut bn_updates) =
            record_fc_stack(&self.config.bottom_fc, tape, store, BOTTOM_FC, e_c, mode, dropout_seed)
                .stage("bottom")?;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (row, &s) in batch.scenario_ids.iter().enumerate() {
            groups.entry(s).or_default().push(row);
        }
        let mut parts = Vec::with_capacity(groups.len());
        for (s, rows) in groups {
            let x = tape.select_rows(bottom, &rows).stage("tower")?;
            let (out, up) =
                record_fc_stack(&self.config.tower_fc, tape, store, &tower_prefix(s), x, mode, dropout_seed)
                    .stage("tower")?;
            bn_updates.extend(up);
            parts.push((out, rows));
        }
        let logits = tape.scatter_rows(parts, batch.len()).stage("tower")?;
        Ok(Recorded { logits, bn_updates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{random_batch, schema, scramble};
    use crate::model::train_step;
    use crate::nn::sigmoid;

    fn tiny() -> SharedBottomModel {
        let settings = SharedBottomSettings {
            embedding_dim: 3,
            bottom: FcSpec {
                hidden: vec![4],
                ..FcSpec::default()
            },
            bottom_out_dim: 3,
            tower: FcSpec {
                hidden: vec![2],
                ..FcSpec::default()
            },
        };
        let s = schema(2);
        SharedBottomModel::new(settings.resolve(&s).unwrap(), s, 2).unwrap()
    }

    #[test]
    fn unseen_scenario_is_routing_error() {
        let m = tiny();
        let mut batch = random_batch(m.schema(), 3, 1);
        batch.scenario_ids[1] = 3;
        assert!(matches!(
            m.predict(&batch),
            Err(Error::Routing {
                scenario: 3,
                num_scenarios: 3
            })
        ));
    }

    #[test]
    fn zero_weights_give_sigmoid_of_bias() {
        let mut m = tiny();
        for (name, e) in m.params_mut().iter_mut() {
            if name.ends_with("weight") {
                e.value.fill(0.0);
            }
        }
        m.params_mut().value_mut("tower.2.1.bias").unwrap().fill(0.7);
        let batch = random_batch(m.schema(), 20, 3);
        let y = m.predict(&batch).unwrap();
        for (p, &s) in y.iter().zip(&batch.scenario_ids) {
            let want = if s == 2 { sigmoid(0.7) } else { 0.5 };
            assert_eq!(*p, want);
        }
    }

    #[test]
    fn towers_are_gradient_isolated() {
        let mut m = tiny();
        scramble(m.params_mut(), 0.8, 6);
        let mut batch = random_batch(m.schema(), 16, 4);
        batch.scenario_ids.iter_mut().for_each(|s| *s = 1);
        train_step(&mut m, &batch, 0).unwrap();
        for (name, e) in m.params().iter() {
            if name.starts_with("tower.0.") || name.starts_with("tower.2.") {
                assert!(e.grad.data().iter().all(|&g| g == 0.0), "{name}");
            }
        }
        assert!(m.params().grad("tower.1.0.weight").unwrap().data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn param_count_closed_form() {
        let m = tiny();
        assert_eq!(m.params().scalar_count(), m.config().param_count(m.schema()));
        // embeddings 3·(4+5); bottom 6→4→3; towers 3 × (3→2→1)
        assert_eq!(m.params().scalar_count(), 27 + (24 + 4 + 12 + 3) + 3 * (6 + 2 + 2 + 1));
    }
}
