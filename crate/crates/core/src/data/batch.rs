use rand::seq::SliceRandom;

use super::{Dataset, FeatureSchema, Sample};
use crate::error::{Error, Result};
use crate::seed;

/// Column-oriented copy of a group of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub scenario_ids: Vec<usize>,
    /// Row-major `len × num_fields`.
    pub common_ids: Vec<usize>,
    pub labels: Vec<f64>,
    pub num_fields: usize,
}

impl Batch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>, num_fields: usize) -> Self {
        let mut b = Batch {
            scenario_ids: Vec::new(),
            common_ids: Vec::new(),
            labels: Vec::new(),
            num_fields,
        };
        for s in samples {
            debug_assert_eq!(s.common_ids.len(), num_fields);
            b.scenario_ids.push(s.scenario_id);
            b.common_ids.extend_from_slice(&s.common_ids);
            b.labels.push(f64::from(s.label));
        }
        b
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::from_samples(ds.samples(), ds.schema().num_common())
    }

    pub fn len(&self) -> usize {
        self.scenario_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenario_ids.is_empty()
    }

    pub fn common(&self, row: usize) -> &[usize] {
        &self.common_ids[row * self.num_fields..(row + 1) * self.num_fields]
    }

    /// Ids of field `field` for every row.
    pub fn field_column(&self, field: usize) -> Vec<usize> {
        (0..self.len()).map(|r| self.common_ids[r * self.num_fields + field]).collect()
    }

    /// Checks every id against `schema`, naming the offending field.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.num_fields != schema.num_common() {
            return Err(Error::Schema(format!(
                "batch has {} common fields, schema has {}",
                self.num_fields,
                schema.num_common()
            )));
        }
        if self.common_ids.len() != self.len() * self.num_fields || self.labels.len() != self.len() {
            return Err(Error::Shape("batch columns have inconsistent lengths".into()));
        }
        for row in 0..self.len() {
            schema.check_sample(&self.sample(row), row)?;
        }
        Ok(())
    }

    pub fn sample(&self, row: usize) -> Sample {
        Sample {
            scenario_id: self.scenario_ids[row],
            common_ids: self.common(row).to_vec(),
            label: self.labels[row] as u8,
        }
    }
}

/// Splits `ds` into batches covering every sample once. With `shuffle`, the
/// order is a permutation determined only by `(seed, epoch)`.
pub fn make_batches(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        let mut rng = seed::rng(seed, &[seed::name_id("shuffle"), epoch]);
        order.shuffle(&mut rng);
    }
    let fields = ds.schema().num_common();
    Ok(order
        .chunks(batch_size)
        .map(|idx| Batch::from_samples(idx.iter().map(|&i| &ds.samples()[i]), fields))
        .collect())
}
