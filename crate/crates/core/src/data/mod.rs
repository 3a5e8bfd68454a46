//! Sample schema, CSV ingestion, vocabularies, synthetic data and batching.

mod batch;
mod csv_io;
mod synthetic;
mod vocab;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{make_batches, Batch};
pub use csv_io::{parse_csv, parse_csv_with_vocab, write_csv, LABEL_COLUMN};
pub use synthetic::{generate_synthetic, GeneratorReport, ScenarioTruth, SplitTruth, SyntheticSpec};
pub use vocab::{Vocabulary, UNKNOWN_INDEX};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub scenario_field: String,
    pub common_fields: Vec<String>,
    pub scenario_cardinality: usize,
    pub common_cardinalities: Vec<usize>,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        if self.common_fields.is_empty() {
            return Err(Error::Schema("at least one common feature is required".into()));
        }
        if self.common_fields.len() != self.common_cardinalities.len() {
            return Err(Error::Schema(format!(
                "{} common fields but {} cardinalities",
                self.common_fields.len(),
                self.common_cardinalities.len()
            )));
        }
        if self.scenario_cardinality == 0 {
            return Err(Error::Schema(format!(
                "field `{}` has cardinality 0",
                self.scenario_field
            )));
        }
        if let Some((f, _)) = self
            .common_fields
            .iter()
            .zip(&self.common_cardinalities)
            .find(|(_, &c)| c == 0)
        {
            return Err(Error::Schema(format!("field `{f}` has cardinality 0")));
        }
        let mut seen = BTreeSet::new();
        for f in std::iter::once(&self.scenario_field).chain(&self.common_fields) {
            if f == csv_io::LABEL_COLUMN {
                return Err(Error::Schema(format!("field name `{f}` is reserved")));
            }
            if !seen.insert(f.as_str()) {
                return Err(Error::Schema(format!("duplicate field name `{f}`")));
            }
        }
        Ok(())
    }

    pub fn num_common(&self) -> usize {
        self.common_fields.len()
    }

    pub(crate) fn check_sample(&self, s: &Sample, row: usize) -> Result<()> {
        if s.scenario_id >= self.scenario_cardinality {
            return Err(Error::Lookup {
                field: self.scenario_field.clone(),
                row,
                index: s.scenario_id,
                cardinality: self.scenario_cardinality,
            });
        }
        if s.common_ids.len() != self.num_common() {
            return Err(Error::Schema(format!(
                "sample {row} has {} common ids, schema has {}",
                s.common_ids.len(),
                self.num_common()
            )));
        }
        for (i, (&id, &card)) in s.common_ids.iter().zip(&self.common_cardinalities).enumerate() {
            if id >= card {
                return Err(Error::Lookup {
                    field: self.common_fields[i].clone(),
                    row,
                    index: id,
                    cardinality: card,
                });
            }
        }
        if s.label > 1 {
            return Err(Error::Schema(format!("sample {row} has label {}", s.label)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub scenario_id: usize,
    pub common_ids: Vec<usize>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    samples: Vec<Sample>,
    split: Split,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, samples: Vec<Sample>, split: Split) -> Result<Self> {
        schema.validate()?;
        for (row, s) in samples.iter().enumerate() {
            schema.check_sample(s, row)?;
        }
        Ok(Self {
            schema,
            samples,
            split,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| f64::from(s.label)).collect()
    }

    /// Keeps samples whose index satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            samples: self
                .samples
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, s)| s.clone())
                .collect(),
            split: self.split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn schema() -> FeatureSchema {
        FeatureSchema {
            scenario_field: "tab".into(),
            common_fields: vec!["f1".into(), "f2".into()],
            scenario_cardinality: 3,
            common_cardinalities: vec![10, 10],
        }
    }

    #[test]
    fn schema_validation() {
        assert!(schema().validate().is_ok());
        let mut s = schema();
        s.common_fields.clear();
        s.common_cardinalities.clear();
        assert!(s.validate().is_err());
        let mut s = schema();
        s.common_fields[1] = "f1".into();
        assert!(s.validate().is_err());
        let mut s = schema();
        s.common_cardinalities[0] = 0;
        assert!(s.validate().is_err());
        let mut s = schema();
        s.common_fields[0] = "label".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn dataset_checks_bounds() {
        let ok = Sample {
            scenario_id: 2,
            common_ids: vec![9, 0],
            label: 1,
        };
        assert!(Dataset::new(schema(), vec![ok.clone()], Split::Train).is_ok());
        let bad = Sample {
            common_ids: vec![10, 0],
            ..ok
        };
        let err = Dataset::new(schema(), vec![bad], Split::Train).unwrap_err();
        assert!(err.to_string().contains("f1"), "{err}");
    }
}
