use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureSchema;
use crate::error::{Error, Result};

/// Index every field reserves for values not seen when the vocabulary was built.
pub const UNKNOWN_INDEX: usize = 0;

/// Raw string value → dense index, per field. Persisted as
/// `{"field": {"raw": index}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    fields: BTreeMap<String, BTreeMap<String, usize>>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn contains_field(&self, field: &str) -> bool {
        self.fields.contains_key(field)
    }

    /// Adds `raw` to `field` if unseen; returns its index (≥ 1).
    pub fn observe(&mut self, field: &str, raw: &str) -> usize {
        let map = self.fields.entry(field.to_owned()).or_default();
        let next = map.len() + 1;
        *map.entry(raw.to_owned()).or_insert(next)
    }

    pub fn encode(&self, field: &str, raw: &str) -> usize {
        self.fields
            .get(field)
            .and_then(|m| m.get(raw))
            .copied()
            .unwrap_or(UNKNOWN_INDEX)
    }

    pub fn decode(&self, field: &str, index: usize) -> Option<&str> {
        self.fields
            .get(field)?
            .iter()
            .find(|(_, &i)| i == index)
            .map(|(k, _)| k.as_str())
    }

    /// Seen values plus the reserved unknown slot.
    pub fn cardinality(&self, field: &str) -> usize {
        self.fields.get(field).map_or(0, BTreeMap::len) + 1
    }

    /// Builds a vocabulary from the given columns of a CSV file, assigning
    /// indices in order of first appearance.
    pub fn from_csv(path: &Path, fields: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse {
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        let mut cols = Vec::with_capacity(fields.len());
        for f in fields {
            let idx = headers
                .iter()
                .position(|h| h == *f)
                .ok_or_else(|| Error::Schema(format!("missing column `{f}`")))?;
            cols.push((*f, idx));
        }
        let mut vocab = Vocabulary::new();
        for f in fields {
            vocab.fields.entry((*f).to_owned()).or_default();
        }
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse {
                row: row + 1,
                message: e.to_string(),
            })?;
            for &(f, idx) in &cols {
                let raw = record.get(idx).unwrap_or_default();
                vocab.observe(f, raw);
            }
        }
        Ok(vocab)
    }

    /// Schema whose cardinalities come from this vocabulary.
    pub fn schema(&self, scenario_field: &str, common_fields: &[String]) -> Result<FeatureSchema> {
        for f in std::iter::once(scenario_field).chain(common_fields.iter().map(String::as_str)) {
            if !self.contains_field(f) {
                return Err(Error::Schema(format!("vocabulary has no field `{f}`")));
            }
        }
        let schema = FeatureSchema {
            scenario_field: scenario_field.to_owned(),
            common_fields: common_fields.to_vec(),
            scenario_cardinality: self.cardinality(scenario_field),
            common_cardinalities: common_fields.iter().map(|f| self.cardinality(f)).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
