//! AUC, log loss, relative improvement, and per-scenario evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::bce_loss;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Rank-sum with average ranks for tied scores; the
/// numerator is kept as an exact integer.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("auc: NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1.0).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positives' rank sum; a tie group over 0-based positions
    // [i, j) has average rank (i + 1 + j) / 2.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1.0).count() as u128;
        rank_sum2 += positives * (i as u128 + 1 + j as u128);
        i = j;
    }
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Mean binary cross-entropy; same definition as training.
pub fn logloss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    bce_loss(scores, labels)
}

/// `((model − 0.5) / (baseline − 0.5) − 1) · 100`.
pub fn relaimpr(model_auc: f64, baseline_auc: f64) -> Result<f64> {
    if !(baseline_auc > 0.5) {
        return Err(Error::UndefinedMetric(format!(
            "relative improvement needs baseline AUC > 0.5, got {baseline_auc}"
        )));
    }
    if !(model_auc >= 0.0) {
        return Err(Error::UndefinedMetric(format!("model AUC {model_auc} is negative")));
    }
    Ok(((model_auc - 0.5) / (baseline_auc - 0.5) - 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    /// `None` when the group holds a single label class.
    pub auc: Option<f64>,
    pub logloss: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaimpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_auc: f64,
    pub overall_logloss: f64,
    pub count: usize,
    pub per_scenario: BTreeMap<usize, ScenarioMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaimpr_vs_baseline: Option<f64>,
}

/// Overall and per-scenario metrics for `scores` aligned with `ds`.
pub fn evaluate(ds: &Dataset, scores: &[f64]) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::UndefinedMetric("cannot evaluate an empty dataset".into()));
    }
    let labels = ds.labels();
    let overall_auc = auc(scores, &labels)?;
    let overall_logloss = logloss(scores, &labels)?;
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((s, &p), &l) in ds.samples().iter().zip(scores).zip(&labels) {
        let g = groups.entry(s.scenario_id).or_default();
        g.0.push(p);
        g.1.push(l);
    }
    let mut per_scenario = BTreeMap::new();
    for (id, (p, l)) in groups {
        let auc = match auc(&p, &l) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        per_scenario.insert(
            id,
            ScenarioMetrics {
                auc,
                logloss: logloss(&p, &l)?,
                count: p.len(),
                relaimpr: None,
            },
        );
    }
    Ok(EvalReport {
        overall_auc,
        overall_logloss,
        count: ds.len(),
        per_scenario,
        relaimpr_vs_baseline: None,
    })
}

impl EvalReport {
    /// Fills relative improvements against `baseline`, overall and for each
    /// scenario where both AUCs are defined and the baseline beats 0.5.
    pub fn compare_to(&mut self, baseline: &EvalReport) -> Result<()> {
        self.relaimpr_vs_baseline = Some(relaimpr(self.overall_auc, baseline.overall_auc)?);
        for (id, m) in &mut self.per_scenario {
            m.relaimpr = match (m.auc, baseline.per_scenario.get(id).and_then(|b| b.auc)) {
                (Some(a), Some(b)) if b > 0.5 => Some(relaimpr(a, b)?),
                _ => None,
            };
        }
        Ok(())
    }

    /// Aligned text table: one row per scenario, then the overall row.
    pub fn table(&self) -> String {
        let with_rel = self.relaimpr_vs_baseline.is_some();
        let mut out = format!("{:<10} {:>8} {:>8} {:>9}", "scenario", "count", "auc", "logloss");
        if with_rel {
            out.push_str(&format!(" {:>9}", "relaimpr"));
        }
        out.push('\n');
        let fmt_auc = |a: Option<f64>| a.map_or_else(|| "n/a".to_owned(), |a| format!("{a:.4}"));
        let fmt_rel = |r: Option<f64>| r.map_or_else(|| "n/a".to_owned(), |r| format!("{r:.2}%"));
        for (id, m) in &self.per_scenario {
            let _ = write!(out, "{id:<10} {:>8} {:>8} {:>9.4}", m.count, fmt_auc(m.auc), m.logloss);
            if with_rel {
                let _ = write!(out, " {:>9}", fmt_rel(m.relaimpr));
            }
            out.push('\n');
        }
        let _ = write!(
            out,
            "{:<10} {:>8} {:>8} {:>9.4}",
            "overall",
            self.count,
            fmt_auc(Some(self.overall_auc)),
            self.overall_logloss
        );
        if with_rel {
            let _ = write!(out, " {:>9}", fmt_rel(self.relaimpr_vs_baseline));
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, Sample, Split};
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[f64]) -> f64 {
        let (mut credit, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1.0 && lj == 0.0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.8, 0.8, 0.1], &[1.0, 0.0, 0.0]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auc(&[0.3, 0.4], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[0.3], &[0.0]), Err(Error::UndefinedMetric(_))));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_with_ties(
            data in prop::collection::vec((0u8..6, prop::bool::ANY), 2..120)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 5.0).collect();
            let labels: Vec<f64> = data.iter().map(|(_, l)| f64::from(u8::from(*l))).collect();
            prop_assume!(labels.contains(&1.0) && labels.contains(&0.0));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_increasing_transform(
            data in prop::collection::vec((-50i32..50, prop::bool::ANY), 2..80)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 10.0).collect();
            let labels: Vec<f64> = data.iter().map(|(_, l)| f64::from(u8::from(*l))).collect();
            prop_assume!(labels.contains(&1.0) && labels.contains(&0.0));
            let squashed: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&squashed, &labels).unwrap());
        }

        #[test]
        fn relaimpr_increases_with_model_auc(b in 0.51f64..0.99, a1 in 0.0f64..1.0, a2 in 0.0f64..1.0) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            prop_assume!(lo < hi);
            prop_assert!(relaimpr(lo, b).unwrap() < relaimpr(hi, b).unwrap());
            prop_assert_eq!(relaimpr(b, b).unwrap(), 0.0);
        }
    }

    #[test]
    fn relaimpr_needs_baseline_above_half() {
        assert!(relaimpr(0.7, 0.5).is_err());
        assert!(relaimpr(0.7, 0.4).is_err());
    }

    #[test]
    fn logloss_of_half_is_ln2() {
        let l = logloss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    fn dataset(rows: &[(usize, u8)]) -> Dataset {
        let schema = FeatureSchema {
            scenario_field: "s".into(),
            common_fields: vec!["a".into()],
            scenario_cardinality: 3,
            common_cardinalities: vec![2],
        };
        let samples = rows
            .iter()
            .map(|&(s, l)| Sample {
                scenario_id: s,
                common_ids: vec![0],
                label: l,
            })
            .collect();
        Dataset::new(schema, samples, Split::Test).unwrap()
    }

    #[test]
    fn single_scenario_report_matches_overall() {
        let ds = dataset(&[(1, 1), (1, 0), (1, 1), (1, 0)]);
        let r = evaluate(&ds, &[0.9, 0.2, 0.4, 0.6]).unwrap();
        let m = &r.per_scenario[&1];
        assert_eq!(m.auc, Some(r.overall_auc));
        assert_eq!(m.logloss, r.overall_logloss);
        assert_eq!(m.count, 4);
    }

    #[test]
    fn overall_logloss_is_count_weighted_mean() {
        let ds = dataset(&[(0, 1), (0, 0), (2, 1), (2, 0), (2, 1)]);
        let scores = [0.7, 0.1, 0.3, 0.6, 0.95];
        let r = evaluate(&ds, &scores).unwrap();
        let weighted: f64 = r.per_scenario.values().map(|m| m.logloss * m.count as f64).sum::<f64>() / 5.0;
        assert!((weighted - r.overall_logloss).abs() < 1e-12);
        assert_eq!(r.per_scenario.values().map(|m| m.count).sum::<usize>(), r.count);
    }

    #[test]
    fn single_class_group_is_reported_undefined() {
        let ds = dataset(&[(0, 1), (0, 1), (2, 1), (2, 0)]);
        let r = evaluate(&ds, &[0.7, 0.1, 0.3, 0.6]).unwrap();
        assert_eq!(r.per_scenario[&0].auc, None);
        assert_eq!(r.per_scenario[&0].count, 2);
        assert!(r.table().contains("n/a"));
    }

    #[test]
    fn table_shows_relative_improvement() {
        let ds = dataset(&[(0, 1), (0, 0), (0, 1), (0, 0)]);
        let mut r = evaluate(&ds, &[0.9, 0.2, 0.4, 0.6]).unwrap();
        let base = evaluate(&ds, &[0.9, 0.2, 0.3, 0.6]).unwrap();
        r.compare_to(&base).unwrap();
        assert!(r.relaimpr_vs_baseline.is_some());
        assert!(r.table().contains("relaimpr"));
    }
}
