use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, parse_csv, parse_csv_with_vocab, Dataset, FeatureSchema, GeneratorReport, Split,
    SyntheticSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{AnyModel, HierRecModel, HierRecSettings, ModelKind, SharedBottomModel, SharedBottomSettings};
use crate::seed;

fn default_kind() -> ModelKind {
    ModelKind::Hierrec
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    256
}
fn default_epochs() -> usize {
    20
}
fn default_patience() -> usize {
    3
}
fn default_seed() -> u64 {
    42
}
fn default_runs() -> usize {
    1
}

/// A feature schema given inline or as a path to its JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    Inline(FeatureSchema),
    File(PathBuf),
}

impl SchemaSource {
    pub fn load(&self) -> Result<FeatureSchema> {
        match self {
            SchemaSource::Inline(s) => Ok(s.clone()),
            SchemaSource::File(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

/// How CSV feature cells are interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum CsvEncoding {
    /// Cells are dense indices below the schema's cardinalities.
    Index { schema: SchemaSource },
    /// Cells are raw values; a vocabulary is built from the training file.
    Vocab {
        scenario_field: String,
        common_fields: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub train: PathBuf,
    pub val: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(flatten)]
    pub encoding: CsvEncoding,
}

/// One JSON document describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_kind")]
    pub model_kind: ModelKind,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub dataset: Option<CsvSource>,
    #[serde(default)]
    pub hierrec: HierRecSettings,
    #[serde(default)]
    pub shared_bottom: SharedBottomSettings,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub num_runs: usize,
}

impl RunConfig {
    /// Config with defaults everywhere and the given synthetic data.
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        Self {
            model_kind: default_kind(),
            synthetic: Some(spec),
            dataset: None,
            hierrec: HierRecSettings::default(),
            shared_bottom: SharedBottomSettings::default(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            early_stop_patience: default_patience(),
            seed: default_seed(),
            num_runs: default_runs(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.dataset) {
            (Some(spec), None) => spec.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "specify exactly one data source: `synthetic` or `dataset`".into(),
                ))
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
            ("num_runs", self.num_runs),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Seed for run `run`; every random draw of a run derives from it.
    pub fn run_seed(&self, run: usize) -> u64 {
        seed::derive(self.seed, &[seed::name_id("run"), run as u64])
    }

    /// Builds an initialized model of the configured kind for `schema`.
    pub fn build_model(&self, schema: &FeatureSchema, seed: u64) -> Result<AnyModel> {
        Ok(match self.model_kind {
            ModelKind::Hierrec => {
                let cfg = self.hierrec.resolve(schema.num_common())?;
                HierRecModel::new(cfg, schema.clone(), seed)?.into()
            }
            ModelKind::SharedBottom => {
                let cfg = self.shared_bottom.resolve(schema)?;
                SharedBottomModel::new(cfg, schema.clone(), seed)?.into()
            }
        })
    }
}

/// Datasets of a run, loaded fully into memory.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
    pub vocab: Option<Vocabulary>,
    pub report: Option<GeneratorReport>,
}

impl RunData {
    pub fn schema(&self) -> &FeatureSchema {
        self.train.schema()
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<RunData> {
    cfg.validate()?;
    if let Some(spec) = &cfg.synthetic {
        let (train, val, test, report) = generate_synthetic(spec)?;
        return Ok(RunData {
            train,
            val,
            test: Some(test),
            vocab: None,
            report: Some(report),
        });
    }
    let src = cfg.dataset.as_ref().expect("validated");
    match &src.encoding {
        CsvEncoding::Index { schema } => {
            let schema = schema.load()?;
            let read = |p: &Path, split| parse_csv(p, &schema, split);
            Ok(RunData {
                train: read(&src.train, Split::Train)?,
                val: read(&src.val, Split::Val)?,
                test: src.test.as_deref().map(|p| read(p, Split::Test)).transpose()?,
                vocab: None,
                report: None,
            })
        }
        CsvEncoding::Vocab {
            scenario_field,
            common_fields,
        } => {
            let mut fields: Vec<&str> = vec![scenario_field];
            fields.extend(common_fields.iter().map(String::as_str));
            let vocab = Vocabulary::from_csv(&src.train, &fields)?;
            let schema = vocab.schema(scenario_field, common_fields)?;
            let read = |p: &Path, split| parse_csv_with_vocab(p, &schema, &vocab, split);
            Ok(RunData {
                train: read(&src.train, Split::Train)?,
                val: read(&src.val, Split::Val)?,
                test: src.test.as_deref().map(|p| read(p, Split::Test)).transpose()?,
                vocab: Some(vocab.clone()),
                report: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            num_scenarios: 2,
            num_common_features: 2,
            cardinality_per_feature: 5,
            samples_per_split: [10, 5, 5],
            seed: 1,
            explicit_strength: 1.0,
            implicit_strength: 1.0,
            noise_std: 0.0,
            base_logit: 0.0,
            planted_pairs: 1,
        }
    }

    #[test]
    fn minimal_json_gets_defaults() {
        let json = serde_json::json!({ "synthetic": spec() });
        let cfg: RunConfig = serde_json::from_value(json).unwrap();
        assert_eq!(cfg, RunConfig::synthetic(spec()));
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.early_stop_patience, 3);
        assert_eq!(cfg.hierrec.embedding_dim, 16);
    }

    #[test]
    fn exactly_one_data_source() {
        let mut cfg = RunConfig::synthetic(spec());
        cfg.validate().unwrap();
        cfg.synthetic = None;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.synthetic = Some(spec());
        cfg.dataset = Some(CsvSource {
            train: "a".into(),
            val: "b".into(),
            test: None,
            encoding: CsvEncoding::Vocab {
                scenario_field: "s".into(),
                common_fields: vec!["f".into()],
            },
        });
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn csv_source_json_forms() {
        let json = serde_json::json!({
            "train": "t.csv", "val": "v.csv", "encoding": "index", "schema": "schema.json"
        });
        let src: CsvSource = serde_json::from_value(json).unwrap();
        assert_eq!(
            src.encoding,
            CsvEncoding::Index {
                schema: SchemaSource::File("schema.json".into())
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = serde_json::json!({ "synthetic": spec(), "lerning_rate": 0.1 });
        assert!(serde_json::from_value::<RunConfig>(json).is_err());
    }
}
