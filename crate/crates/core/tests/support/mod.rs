//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod reference;

use hierrec::data::{FeatureSchema, Sample, SyntheticSpec};
use hierrec::model::{
    AnyModel, CtrModel, FcSpec, HierRecModel, HierRecSettings, SharedBottomModel, SharedBottomSettings,
};
use hierrec::nn::Activation;
use hierrec::seed;
use hierrec::trainer::{randomize_params, RunConfig};
use rand::Rng;

fn activation(rng: &mut impl Rng) -> Activation {
    [Activation::Relu, Activation::Tanh, Activation::Identity][rng.random_range(0..3)]
}

fn spec(rng: &mut impl Rng) -> FcSpec {
    FcSpec {
        hidden: if rng.random_bool(0.3) { vec![rng.random_range(1..=4)] } else { vec![] },
        activation: activation(rng),
        use_batch_norm: rng.random_bool(0.4),
        ..FcSpec::default()
    }
}

fn schema(rng: &mut impl Rng) -> FeatureSchema {
    let fields = rng.random_range(1..=4);
    FeatureSchema {
        scenario_field: "scenario".into(),
        common_fields: (0..fields).map(|i| format!("f{i}")).collect(),
        scenario_cardinality: rng.random_range(1..=3),
        common_cardinalities: (0..fields).map(|_| rng.random_range(1..=5)).collect(),
    }
}

fn samples(schema: &FeatureSchema, n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            scenario_id: rng.random_range(0..schema.scenario_cardinality),
            common_ids: schema.common_cardinalities.iter().map(|&c| rng.random_range(0..c)).collect(),
            label: u8::from(rng.random_bool(0.5)),
        })
        .collect()
}

/// A randomly shaped tiny HierRec (any ablation, activation, depth and BN
/// setting) with scrambled parameters, plus a few samples for it.
pub fn random_hierrec(case: u64) -> (HierRecModel, Vec<Sample>) {
    let mut rng = seed::rng(case, &[seed::name_id("random hierrec")]);
    let schema = schema(&mut rng);
    let settings = HierRecSettings {
        embedding_dim: rng.random_range(1..=4),
        num_heads: rng.random_range(1..=3),
        global_dim: rng.random_range(1..=5),
        explicit_out_dim: rng.random_range(1..=4),
        implicit_out_dim: rng.random_range(1..=4),
        bottleneck_r: rng.random_range(1..=3),
        global_fc: spec(&mut rng),
        explicit_condition_fc: spec(&mut rng),
        attention_fc: spec(&mut rng),
        implicit_condition_fc: spec(&mut rng),
        ablate_multi_head: rng.random_bool(0.2),
        ablate_implicit: rng.random_bool(0.2),
        ablate_explicit: rng.random_bool(0.2),
    };
    let cfg = settings.resolve(schema.num_common()).unwrap();
    let mut m = HierRecModel::new(cfg, schema.clone(), case).unwrap();
    randomize_params(m.params_mut(), 0.6, case);
    let xs = samples(&schema, 5, &mut rng);
    (m, xs)
}

pub fn random_shared_bottom(case: u64) -> (SharedBottomModel, Vec<Sample>) {
    let mut rng = seed::rng(case, &[seed::name_id("random shared bottom")]);
    let schema = schema(&mut rng);
    let settings = SharedBottomSettings {
        embedding_dim: rng.random_range(1..=4),
        bottom: spec(&mut rng),
        bottom_out_dim: rng.random_range(1..=5),
        tower: spec(&mut rng),
    };
    let cfg = settings.resolve(&schema).unwrap();
    let mut m = SharedBottomModel::new(cfg, schema.clone(), case).unwrap();
    randomize_params(m.params_mut(), 0.6, case);
    let xs = samples(&schema, 5, &mut rng);
    (m, xs)
}

/// Largest absolute gap between reference, tape and frozen predictions over
/// `cases` random HierRec and Shared Bottom models.
pub fn forward_oracle_gap(cases: u64) -> f64 {
    use hierrec::data::Batch;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (h, xs) = random_hierrec(case);
        let want: Vec<f64> = xs.iter().map(|x| reference::hierrec_prob(&h, x)).collect();
        let (s, ys) = random_shared_bottom(case);
        let want_sb: Vec<f64> = ys.iter().map(|x| reference::shared_bottom_prob(&s, x)).collect();
        for (model, xs, want) in [(AnyModel::from(h), &xs, want), (AnyModel::from(s), &ys, want_sb)] {
            let batch = Batch::from_samples(xs, model.schema().num_common());
            let tape = model.predict(&batch).unwrap();
            let frozen = model.freeze().unwrap().predict(&batch).unwrap();
            for ((a, b), c) in tape.iter().zip(&frozen).zip(&want) {
                worst = worst.max((a - c).abs()).max((b - c).abs());
            }
        }
    }
    worst
}

/// Planted-implicit fixture for the ablation comparison: three scenarios,
/// one planted pair among four features of cardinality 50, and a 20% base
/// click rate.
pub fn ablation_spec(implicit_strength: f64) -> SyntheticSpec {
    SyntheticSpec {
        num_scenarios: 3,
        num_common_features: 4,
        cardinality_per_feature: 50,
        samples_per_split: [20_000, 5_000, 5_000],
        seed: 11,
        explicit_strength: 1.0,
        implicit_strength,
        noise_std: 0.0,
        base_logit: -1.5,
        planted_pairs: 1,
    }
}

pub fn ablation_config(implicit_strength: f64) -> RunConfig {
    let mut cfg = RunConfig::synthetic(ablation_spec(implicit_strength));
    cfg.hierrec = HierRecSettings {
        embedding_dim: 8,
        num_heads: 2,
        global_dim: 32,
        explicit_out_dim: 16,
        implicit_out_dim: 8,
        bottleneck_r: 4,
        ..HierRecSettings::default()
    };
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 256;
    cfg.max_epochs = 40;
    cfg.early_stop_patience = 8;
    cfg.num_runs = 5;
    cfg
}

/// Small synthetic run used by determinism and smoke checks.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::synthetic(SyntheticSpec {
        num_scenarios: 3,
        num_common_features: 4,
        cardinality_per_feature: 8,
        samples_per_split: [600, 200, 200],
        seed: 3,
        explicit_strength: 1.0,
        implicit_strength: 1.0,
        noise_std: 0.1,
        base_logit: 0.0,
        planted_pairs: 1,
    });
    cfg.hierrec = HierRecSettings {
        embedding_dim: 4,
        num_heads: 2,
        global_dim: 8,
        explicit_out_dim: 6,
        implicit_out_dim: 4,
        bottleneck_r: 2,
        global_fc: FcSpec {
            dropout_rate: 0.1,
            ..FcSpec::default().with_batch_norm()
        },
        ..HierRecSettings::default()
    };
    cfg.learning_rate = 0.01;
    cfg.batch_size = 64;
    cfg.max_epochs = 3;
    cfg
}
