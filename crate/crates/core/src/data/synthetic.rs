//! Synthetic multi-scenario click data with planted structure.
//!
//! Each sample's click logit is
//!
//! ```text
//! base_logit + explicit_offset[s] + implicit_strength · Σ_p sign[s][p] · u_a[v_a] · u_b[v_b] + noise
//! ```
//!
//! where `s` is the scenario, each planted pair `p` joins features
//! `(a, b) = (2p, 2p + 1)`, `u_f` is a fixed standard-normal factor per
//! feature value, and `sign[s][p] = (−1)^(s + p)` flips the interaction
//! between neighbouring scenarios. Explicit offsets are evenly spaced in
//! `[−explicit_strength, explicit_strength]`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureSchema, Sample, Split};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::seed;

fn default_pairs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_scenarios: usize,
    pub num_common_features: usize,
    pub cardinality_per_feature: usize,
    /// Train, validation and test sizes.
    pub samples_per_split: [usize; 3],
    pub seed: u64,
    pub explicit_strength: f64,
    pub implicit_strength: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub base_logit: f64,
    #[serde(default = "default_pairs")]
    pub planted_pairs: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(m));
        if self.num_scenarios == 0 || self.num_common_features == 0 || self.cardinality_per_feature == 0 {
            return bad("scenario count, feature count and cardinality must be positive".into());
        }
        if self.samples_per_split[0] == 0 {
            return bad("train split must contain at least one sample".into());
        }
        for (name, v) in [
            ("explicit_strength", self.explicit_strength),
            ("implicit_strength", self.implicit_strength),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.base_logit.is_finite() {
            return bad("base_logit must be finite".into());
        }
        if self.implicit_strength > 0.0 && 2 * self.planted_pairs > self.num_common_features {
            return bad(format!(
                "{} planted pairs need {} features, have {}",
                self.planted_pairs,
                2 * self.planted_pairs,
                self.num_common_features
            ));
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            scenario_field: "scenario".into(),
            common_fields: (1..=self.num_common_features).map(|i| format!("f{i}")).collect(),
            scenario_cardinality: self.num_scenarios,
            common_cardinalities: vec![self.cardinality_per_feature; self.num_common_features],
        }
    }

    pub fn explicit_offsets(&self) -> Vec<f64> {
        let s = self.num_scenarios;
        (0..s)
            .map(|i| {
                if s == 1 {
                    0.0
                } else {
                    self.explicit_strength * (-1.0 + 2.0 * i as f64 / (s - 1) as f64)
                }
            })
            .collect()
    }

    fn active_pairs(&self) -> usize {
        if self.implicit_strength > 0.0 {
            self.planted_pairs
        } else {
            0
        }
    }

    pub fn planted_pair_features(&self) -> Vec<(usize, usize)> {
        (0..self.active_pairs()).map(|p| (2 * p, 2 * p + 1)).collect()
    }

    pub fn pair_sign(scenario: usize, pair: usize) -> f64 {
        if (scenario + pair).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTruth {
    pub count: usize,
    /// Mean of the per-sample click probabilities actually used to draw labels.
    pub planted_ctr: Option<f64>,
    pub empirical_ctr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub scenario_id: usize,
    pub explicit_offset: f64,
    /// `sigmoid(base + offset)`; only present when there is no implicit signal and no noise.
    pub closed_form_ctr: Option<f64>,
    pub splits: BTreeMap<String, SplitTruth>,
}

/// Sidecar describing the planted ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub spec: SyntheticSpec,
    pub planted_pairs: Vec<(usize, usize)>,
    /// Per-value factors `u_f` of every feature in a planted pair.
    pub factors: BTreeMap<usize, Vec<f64>>,
    pub scenarios: Vec<ScenarioTruth>,
}

impl GeneratorReport {
    /// The noiseless planted click logit of one sample.
    pub fn planted_logit(&self, scenario: usize, common_ids: &[usize]) -> f64 {
        let offset = self.scenarios[scenario].explicit_offset;
        logit(&self.spec, &self.planted_pairs, &self.factors, offset, scenario, common_ids)
    }
}

/// Per-value factors `u_f` for every feature that takes part in a pair.
fn draw_factors(spec: &SyntheticSpec, pairs: &[(usize, usize)]) -> BTreeMap<usize, Vec<f64>> {
    let mut rng = seed::rng(spec.seed, &[seed::name_id("factors")]);
    let mut factors = BTreeMap::new();
    for &(a, b) in pairs {
        for f in [a, b] {
            let v: Vec<f64> = (0..spec.cardinality_per_feature)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            factors.insert(f, v);
        }
    }
    factors
}

fn logit(
    spec: &SyntheticSpec,
    pairs: &[(usize, usize)],
    factors: &BTreeMap<usize, Vec<f64>>,
    offset: f64,
    scenario: usize,
    ids: &[usize],
) -> f64 {
    let interaction: f64 = pairs
        .iter()
        .enumerate()
        .map(|(p, &(a, b))| SyntheticSpec::pair_sign(scenario, p) * factors[&a][ids[a]] * factors[&b][ids[b]])
        .sum();
    spec.base_logit + offset + spec.implicit_strength * interaction
}

/// Generates train/val/test splits and the ground-truth report. Output is a
/// pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, Dataset, GeneratorReport)> {
    spec.validate()?;
    let pairs = spec.planted_pair_features();
    let factors = draw_factors(spec, &pairs);
    let offsets = spec.explicit_offsets();
    let schema = spec.schema();
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut datasets = Vec::with_capacity(3);
    let mut truth: Vec<BTreeMap<String, SplitTruth>> = vec![BTreeMap::new(); spec.num_scenarios];

    for (k, &split) in splits.iter().enumerate() {
        let mut rng = seed::rng(spec.seed, &[seed::name_id("split"), k as u64]);
        let n = spec.samples_per_split[k];
        let mut samples = Vec::with_capacity(n);
        let mut prob_sum = vec![0.0; spec.num_scenarios];
        let mut clicks = vec![0usize; spec.num_scenarios];
        let mut counts = vec![0usize; spec.num_scenarios];
        for _ in 0..n {
            let scenario_id = rng.random_range(0..spec.num_scenarios);
            let common_ids: Vec<usize> = (0..spec.num_common_features)
                .map(|_| rng.random_range(0..spec.cardinality_per_feature))
                .collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let p = sigmoid(logit(spec, &pairs, &factors, offsets[scenario_id], scenario_id, &common_ids) + spec.noise_std * noise);
            let label = u8::from(rng.random::<f64>() < p);
            prob_sum[scenario_id] += p;
            clicks[scenario_id] += usize::from(label);
            counts[scenario_id] += 1;
            samples.push(Sample {
                scenario_id,
                common_ids,
                label,
            });
        }
        for s in 0..spec.num_scenarios {
            let c = counts[s];
            truth[s].insert(
                split.name().to_owned(),
                SplitTruth {
                    count: c,
                    planted_ctr: (c > 0).then(|| prob_sum[s] / c as f64),
                    empirical_ctr: (c > 0).then(|| clicks[s] as f64 / c as f64),
                },
            );
        }
        datasets.push(Dataset::new(schema.clone(), samples, split)?);
    }

    let closed_form = pairs.is_empty() && spec.noise_std == 0.0;
    let scenarios = truth
        .into_iter()
        .enumerate()
        .map(|(s, splits)| ScenarioTruth {
            scenario_id: s,
            explicit_offset: offsets[s],
            closed_form_ctr: closed_form.then(|| sigmoid(spec.base_logit + offsets[s])),
            splits,
        })
        .collect();
    let report = GeneratorReport {
        spec: spec.clone(),
        planted_pairs: pairs,
        factors,
        scenarios,
    };
    let test = datasets.pop().expect("three splits");
    let val = datasets.pop().expect("three splits");
    let train = datasets.pop().expect("three splits");
    Ok((train, val, test, report))
}
