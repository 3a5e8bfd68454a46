//! Fixtures shared by the model unit tests.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Batch, FeatureSchema};
use crate::model::HierRecSettings;
use crate::nn::ParameterStore;
use crate::seed;

pub fn schema(fields: usize) -> FeatureSchema {
    FeatureSchema {
        scenario_field: "scenario".into(),
        common_fields: (1..=fields).map(|i| format!("f{i}")).collect(),
        scenario_cardinality: 3,
        common_cardinalities: (0..fields).map(|i| 4 + i).collect(),
    }
}

pub fn tiny_settings() -> HierRecSettings {
    HierRecSettings {
        embedding_dim: 3,
        num_heads: 2,
        global_dim: 5,
        explicit_out_dim: 4,
        implicit_out_dim: 3,
        bottleneck_r: 2,
        ..HierRecSettings::default()
    }
}

pub fn random_batch(schema: &FeatureSchema, n: usize, seed: u64) -> Batch {
    let mut rng = seed::rng(seed, &[]);
    let fields = schema.num_common();
    let mut b = Batch {
        scenario_ids: Vec::new(),
        common_ids: Vec::new(),
        labels: Vec::new(),
        num_fields: fields,
    };
    for _ in 0..n {
        b.scenario_ids.push(rng.random_range(0..schema.scenario_cardinality));
        for &card in &schema.common_cardinalities {
            b.common_ids.push(rng.random_range(0..card));
        }
        b.labels.push(f64::from(u8::from(rng.random_bool(0.5))));
    }
    b
}

/// Replaces every parameter and buffer with `N(0, std²)` draws (variances
/// with their absolute value plus one half).
pub fn scramble(store: &mut ParameterStore, std: f64, seed: u64) {
    let mut rng = seed::rng(seed, &[]);
    let normal = Normal::new(0.0, std).unwrap();
    for (_, e) in store.iter_mut() {
        e.value.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    let names: Vec<String> = store.buffers().map(|(n, _)| n.to_owned()).collect();
    for n in names {
        let var = n.ends_with("var");
        store.buffer_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| {
            let x: f64 = normal.sample(&mut rng);
            *v = if var { x.abs() + 0.5 } else { x };
        });
    }
}
