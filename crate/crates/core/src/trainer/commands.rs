use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{load_data, RunConfig, RunData};
use super::train::{evaluate_model, train, TrainSettings};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::{generate_synthetic, parse_csv, parse_csv_with_vocab, write_csv, Batch, Dataset, FeatureSchema, Split};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{
    check_gradients, export_attention_weights, AnyModel, CtrModel, FcSpec, HierRecModel, HierRecSettings,
    ModelKind, SharedBottomModel, SharedBottomSettings,
};
use crate::nn::{Activation, GradCheckOptions, ParamCheck, ParameterStore};
use crate::seed;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `train.csv`, `val.csv`, `test.csv` (dense indices), `schema.json`
/// and the generator's `report.json` into `out`.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("gen-data needs a `synthetic` section".into()))?;
    let (train, val, test, report) = generate_synthetic(spec)?;
    create_dir(out)?;
    let mut files = Vec::new();
    for (name, ds) in [("train.csv", &train), ("val.csv", &val), ("test.csv", &test)] {
        let path = out.join(name);
        write_csv(ds, &path, None)?;
        files.push(path);
    }
    let schema = out.join("schema.json");
    write_json(&schema, train.schema())?;
    let rep = out.join("report.json");
    write_json(&rep, &report)?;
    files.extend([schema, rep]);
    Ok(files)
}

impl RunConfig {
    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_auc: f64,
    pub best_val_logloss: f64,
    pub test: Option<EvalReport>,
    pub checkpoint: PathBuf,
}

/// Trains `num_runs` models. With one run, `out` receives `model.json`,
/// `train_log.jsonl` and `test_report.json`; otherwise each run gets its own
/// `run_<k>` directory. `summary.json` lists every run.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<RunSummary>> {
    let data = load_data(cfg)?;
    let settings = cfg.train_settings();
    create_dir(out)?;
    let mut summaries = Vec::with_capacity(cfg.num_runs);
    for run in 0..cfg.num_runs {
        let dir = if cfg.num_runs == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("run_{run}"))
        };
        create_dir(&dir)?;
        let run_seed = cfg.run_seed(run);
        let model = cfg.build_model(data.schema(), run_seed)?;
        let log_path = dir.join("train_log.jsonl");
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(file);
        let outcome = train(model, &data.train, &data.val, &settings, run_seed, run, &mut log)?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let checkpoint = dir.join("model.json");
        save_checkpoint(&outcome.model, data.vocab.as_ref(), &checkpoint)?;
        let test = match &data.test {
            Some(ds) if !ds.is_empty() => {
                let report = evaluate_model(&outcome.model, ds)?;
                write_json(&dir.join("test_report.json"), &report)?;
                Some(report)
            }
            _ => None,
        };
        summaries.push(RunSummary {
            run,
            seed: run_seed,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
            best_val_auc: outcome.best_val.overall_auc,
            best_val_logloss: outcome.best_val.overall_logloss,
            test,
            checkpoint,
        });
    }
    write_json(&out.join("summary.json"), &summaries)?;
    Ok(summaries)
}

/// Reads a CSV with the checkpoint's encoding: through its vocabulary when it
/// has one, as dense indices otherwise.
pub fn load_dataset_for(ckpt: &Checkpoint, path: &Path, split: Split) -> Result<Dataset> {
    let schema = ckpt.model.schema();
    match &ckpt.vocab {
        Some(v) => parse_csv_with_vocab(path, schema, v, split),
        None => parse_csv(path, schema, split),
    }
}

/// Evaluates a checkpoint on a CSV, with relative improvement when a
/// baseline checkpoint is given.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path, baseline: Option<&Path>) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let ds = load_dataset_for(&ckpt, dataset, Split::Test)?;
    let mut report = evaluate_model(&ckpt.model, &ds)?;
    if let Some(b) = baseline {
        let base = load_checkpoint(b)?;
        let base_ds = load_dataset_for(&base, dataset, Split::Test)?;
        report.compare_to(&evaluate_model(&base.model, &base_ds)?)?;
    }
    Ok(report)
}

pub const ABLATION_VARIANTS: [&str; 4] = ["full", "-MI", "-I", "-E"];

/// HierRec settings for one ablation variant.
pub fn ablation_settings(base: &HierRecSettings, variant: &str) -> Result<HierRecSettings> {
    let mut s = base.clone();
    match variant {
        "full" => {}
        "-MI" => s.ablate_multi_head = true,
        "-I" => s.ablate_implicit = true,
        "-E" => s.ablate_explicit = true,
        other => return Err(Error::Config(format!("unknown ablation variant `{other}`"))),
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRun {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub auc: f64,
    pub logloss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_auc: f64,
    pub mean_logloss: f64,
    pub runs: Vec<AblationRun>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    /// Split the metrics were computed on.
    pub split: String,
    pub variants: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == name)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:>9} {:>9} {:>5}\n", "variant", "auc", "logloss", "runs");
        for v in &self.variants {
            out.push_str(&format!(
                "{:<8} {:>9.4} {:>9.4} {:>5}\n",
                v.variant,
                v.mean_auc,
                v.mean_logloss,
                v.runs.len()
            ));
        }
        out
    }
}

/// Trains full HierRec and the -MI, -I and -E variants for every run, with
/// the same run seeds across variants, in parallel. Metrics come from the
/// test split, or validation when there is none.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let data = load_data(cfg)?;
    ablate_on(cfg, &data)
}

pub fn ablate_on(cfg: &RunConfig, data: &RunData) -> Result<AblationReport> {
    let (eval_ds, split) = match &data.test {
        Some(t) if !t.is_empty() => (t, "test"),
        _ => (&data.val, "val"),
    };
    let settings = cfg.train_settings();
    let jobs: Vec<(usize, usize)> = (0..ABLATION_VARIANTS.len())
        .flat_map(|v| (0..cfg.num_runs).map(move |r| (v, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(v, run)| {
            let variant = RunConfig {
                model_kind: ModelKind::Hierrec,
                hierrec: ablation_settings(&cfg.hierrec, ABLATION_VARIANTS[v])?,
                ..cfg.clone()
            };
            let run_seed = cfg.run_seed(run);
            let model = variant.build_model(data.schema(), run_seed)?;
            let outcome = train(model, &data.train, &data.val, &settings, run_seed, run, &mut io::sink())?;
            let report = evaluate_model(&outcome.model, eval_ds)?;
            Ok(AblationRun {
                run,
                seed: run_seed,
                best_epoch: outcome.best_epoch,
                auc: report.overall_auc,
                logloss: report.overall_logloss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let variants = ABLATION_VARIANTS
        .iter()
        .enumerate()
        .map(|(v, name)| {
            let runs: Vec<AblationRun> = jobs
                .iter()
                .zip(&results)
                .filter(|((jv, _), _)| *jv == v)
                .map(|(_, r)| r.clone())
                .collect();
            let n = runs.len() as f64;
            VariantSummary {
                variant: (*name).to_owned(),
                mean_auc: runs.iter().map(|r| r.auc).sum::<f64>() / n,
                mean_logloss: runs.iter().map(|r| r.logloss).sum::<f64>() / n,
                runs,
            }
        })
        .collect();
    Ok(AblationReport {
        split: split.to_owned(),
        variants,
    })
}

/// Rows per forward pass when benchmarking.
pub const BENCH_BATCH: usize = 256;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub model_kind: ModelKind,
    pub timings_s: Vec<f64>,
    pub median_s: f64,
    pub per_sample_us: f64,
    /// Median time relative to the fastest model, in percent.
    pub increase_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: usize,
    pub repetitions: usize,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>14} {:>12} {:>10}\n",
            "model", "median_s", "us/sample", "increase"
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:<24} {:>14.6} {:>12.3} {:>9.2}%\n",
                e.name, e.median_s, e.per_sample_us, e.increase_pct
            ));
        }
        out
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times eval-mode scoring of every row of each dataset, on the calling
/// thread only. Batches are built before the clock starts.
pub fn bench_models(models: &[(String, AnyModel, Dataset)], repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("bench needs at least one repetition".into()));
    }
    if models.is_empty() {
        return Err(Error::Config("bench needs at least one checkpoint".into()));
    }
    let mut entries = Vec::new();
    let mut samples = 0;
    for (name, model, ds) in models {
        let frozen = model.freeze()?;
        let batches: Vec<Batch> = ds
            .samples()
            .chunks(BENCH_BATCH)
            .map(|c| Batch::from_samples(c, ds.schema().num_common()))
            .collect();
        samples = ds.len();
        // warm-up pass, untimed
        let mut sink = 0.0;
        for b in &batches {
            sink += frozen.predict(b)?.iter().sum::<f64>();
        }
        let mut timings = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            for b in &batches {
                sink += frozen.predict(b)?.iter().sum::<f64>();
            }
            timings.push(start.elapsed().as_secs_f64());
        }
        std::hint::black_box(sink);
        let med = median(&timings);
        entries.push(BenchEntry {
            name: name.clone(),
            model_kind: model.kind(),
            timings_s: timings,
            median_s: med,
            per_sample_us: med / ds.len().max(1) as f64 * 1e6,
            increase_pct: 0.0,
        });
    }
    let fastest = entries.iter().map(|e| e.per_sample_us).fold(f64::INFINITY, f64::min);
    for e in &mut entries {
        e.increase_pct = (e.per_sample_us / fastest - 1.0) * 100.0;
    }
    Ok(BenchReport {
        samples,
        repetitions,
        entries,
    })
}

pub fn cmd_bench(checkpoints: &[PathBuf], dataset: &Path, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("bench needs at least one repetition".into()));
    }
    let mut models = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        let ckpt = load_checkpoint(path)?;
        let ds = load_dataset_for(&ckpt, dataset, Split::Test)?;
        models.push((path.display().to_string(), ckpt.model, ds));
    }
    bench_models(&models, repetitions)
}

/// Writes the per-scenario attention export of a HierRec checkpoint.
pub fn cmd_dump_attention(checkpoint: &Path, out: &Path) -> Result<()> {
    match load_checkpoint(checkpoint)?.model {
        AnyModel::HierRec(m) => export_attention_weights(&m, out),
        AnyModel::SharedBottom(_) => Err(Error::Config("attention export needs a HierRec checkpoint".into())),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckCase {
    pub name: String,
    pub tolerance: f64,
    pub passed: bool,
    pub max_rel_error: f64,
    pub scalars: usize,
    pub violations: Vec<String>,
    pub params: Vec<ParamCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub passed: bool,
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckSummary {
    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            out.push_str(&format!(
                "{:<22} {:>6} scalars  max rel err {:.3e}  (tol {:.0e})  {}\n",
                c.name,
                c.scalars,
                c.max_rel_error,
                c.tolerance,
                if c.passed { "ok" } else { "FAIL" }
            ));
            for p in c.params.iter().filter(|p| c.violations.contains(&p.name)) {
                out.push_str(&format!(
                    "    {} [{}]: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})\n",
                    p.name, p.worst_index, p.analytic, p.numeric, p.max_rel_error
                ));
            }
        }
        out
    }
}

/// Schema of the canned gradient-check models: four common fields.
pub fn gradcheck_schema() -> FeatureSchema {
    FeatureSchema {
        scenario_field: "scenario".into(),
        common_fields: (1..=4).map(|i| format!("f{i}")).collect(),
        scenario_cardinality: 3,
        common_cardinalities: vec![3, 4, 3, 5],
    }
}

/// Tiny HierRec: d=3, I=4, G=2.
pub fn gradcheck_hierrec_settings(activation: Activation) -> HierRecSettings {
    let spec = FcSpec {
        activation,
        ..FcSpec::default()
    };
    HierRecSettings {
        embedding_dim: 3,
        num_heads: 2,
        global_dim: 4,
        explicit_out_dim: 4,
        implicit_out_dim: 3,
        bottleneck_r: 2,
        global_fc: spec.clone().with_batch_norm(),
        explicit_condition_fc: spec.clone(),
        attention_fc: spec.clone(),
        implicit_condition_fc: spec,
        ..HierRecSettings::default()
    }
}

fn gradcheck_shared_bottom_settings(activation: Activation) -> SharedBottomSettings {
    let spec = FcSpec {
        hidden: vec![4],
        activation,
        ..FcSpec::default()
    };
    SharedBottomSettings {
        embedding_dim: 3,
        bottom: spec.clone().with_batch_norm(),
        bottom_out_dim: 4,
        tower: spec,
    }
}

/// Replaces every parameter with `N(0, std²)` draws and every batch-norm
/// running variance with `|N(0, std²)| + 0.5`, so gradients are not
/// vanishingly small.
pub fn randomize_params(store: &mut ParameterStore, std: f64, seed: u64) {
    let normal = Normal::new(0.0, std).expect("std > 0");
    let mut rng = seed::rng(seed, &[seed::name_id("randomize")]);
    for (_, e) in store.iter_mut() {
        e.value.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    let names: Vec<String> = store.buffers().map(|(n, _)| n.to_owned()).collect();
    for n in names {
        let var = n.ends_with("running_var");
        let buf = store.buffer_mut(&n).expect("listed");
        buf.data_mut().iter_mut().for_each(|v| {
            let x = normal.sample(&mut rng);
            *v = if var { x.abs() + 0.5 } else { x };
        });
    }
}

fn gradcheck_batch(schema: &FeatureSchema, n: usize, seed: u64) -> Batch {
    let mut rng = seed::rng(seed, &[seed::name_id("gradcheck batch")]);
    let samples: Vec<crate::data::Sample> = (0..n)
        .map(|i| crate::data::Sample {
            scenario_id: i % schema.scenario_cardinality,
            common_ids: schema.common_cardinalities.iter().map(|&c| rng.random_range(0..c)).collect(),
            label: u8::from(rng.random_bool(0.5)),
        })
        .collect();
    Batch::from_samples(&samples, schema.num_common())
}

pub const GRADCHECK_SEED: u64 = 7;
/// Large enough that finite-difference roundoff stays far below the
/// gradients, small enough that no prediction reaches the loss clamp, where
/// the loss is flat but the logit gradient `p − y` is not.
pub const GRADCHECK_PARAM_STD: f64 = 0.5;
pub const GRADCHECK_RANDOMIZE_SEED: u64 = 2;

/// The canned cases: relu HierRec and Shared Bottom at 1e-4, their
/// identity-activation versions at 1e-6.
pub fn gradcheck_models() -> Result<Vec<(String, AnyModel, f64)>> {
    gradcheck_models_with(GRADCHECK_PARAM_STD, GRADCHECK_RANDOMIZE_SEED)
}

fn gradcheck_models_with(std: f64, seed0: u64) -> Result<Vec<(String, AnyModel, f64)>> {
    let schema = gradcheck_schema();
    let mut out = Vec::new();
    for (suffix, act, tol) in [("", Activation::Relu, 1e-4), ("_smooth", Activation::Identity, 1e-6)] {
        let hcfg = gradcheck_hierrec_settings(act).resolve(schema.num_common())?;
        let h: AnyModel = HierRecModel::new(hcfg, schema.clone(), GRADCHECK_SEED)?.into();
        out.push((format!("hierrec{suffix}"), h, tol));
        let scfg = gradcheck_shared_bottom_settings(act).resolve(&schema)?;
        let s: AnyModel = SharedBottomModel::new(scfg, schema.clone(), GRADCHECK_SEED)?.into();
        out.push((format!("shared_bottom{suffix}"), s, tol));
    }
    for (i, (_, m, _)) in out.iter_mut().enumerate() {
        randomize_params(m.params_mut(), std, seed0 + i as u64);
    }
    Ok(out)
}

/// Runs the finite-difference check on every canned case. `flip_sign_of`
/// corrupts one parameter's analytic gradient to prove detection.
pub fn cmd_gradcheck(flip_sign_of: Option<&str>) -> Result<GradCheckSummary> {
    let schema = gradcheck_schema();
    let batch = gradcheck_batch(&schema, 8, GRADCHECK_SEED);
    let mut cases = Vec::new();
    for (name, model, tol) in gradcheck_models()? {
        let opts = GradCheckOptions {
            flip_sign_of: flip_sign_of.filter(|p| model.params().contains(p)).map(str::to_owned),
            ..GradCheckOptions::with_tolerance(tol)
        };
        let report = check_gradients(&model, &batch, &opts)?;
        cases.push(GradCheckCase {
            name,
            tolerance: tol,
            passed: report.passed(),
            max_rel_error: report.max_rel_error(),
            scalars: model.params().scalar_count(),
            violations: report.violations.clone(),
            params: report.params.clone(),
        });
    }
    Ok(GradCheckSummary {
        passed: cases.iter().all(|c| c.passed),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            num_scenarios: 3,
            num_common_features: 3,
            cardinality_per_feature: 6,
            samples_per_split: [300, 100, 100],
            seed: 5,
            explicit_strength: 1.0,
            implicit_strength: 1.0,
            noise_std: 0.1,
            base_logit: 0.0,
            planted_pairs: 1,
        }
    }

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::synthetic(spec());
        cfg.hierrec = HierRecSettings {
            embedding_dim: 4,
            num_heads: 2,
            global_dim: 8,
            explicit_out_dim: 6,
            implicit_out_dim: 4,
            bottleneck_r: 2,
            ..HierRecSettings::default()
        };
        cfg.max_epochs = 2;
        cfg.batch_size = 64;
        cfg
    }

    #[test]
    fn canned_gradients_pass() {
        let summary = cmd_gradcheck(None).unwrap();
        assert!(summary.passed, "{}", summary.table());
        assert_eq!(summary.cases.len(), 4);
    }

    #[test]
    fn flipped_gradient_is_reported() {
        let summary = cmd_gradcheck(Some("global_fc.0.weight")).unwrap();
        assert!(!summary.passed);
        let bad: Vec<&str> = summary.cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert_eq!(bad, ["hierrec", "hierrec_smooth"]);
        assert!(summary.table().contains("global_fc.0.weight"));
    }

    #[test]
    fn gen_data_is_byte_identical() {
        let cfg = small_config();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let files = cmd_gen_data(&cfg, a.path()).unwrap();
        cmd_gen_data(&cfg, b.path()).unwrap();
        for f in files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(&f).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn train_then_eval_reproduces_test_report() {
        let mut cfg = small_config();
        cfg.learning_rate = 0.01;
        cfg.max_epochs = 5;
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        cmd_gen_data(&cfg, &data_dir).unwrap();
        let runs = cmd_train(&cfg, &dir.path().join("model")).unwrap();
        let test = runs[0].test.clone().unwrap();
        let log = fs::read_to_string(dir.path().join("model/train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), runs[0].epochs_run);
        let report = cmd_eval(&runs[0].checkpoint, &data_dir.join("test.csv"), None).unwrap();
        assert_eq!(report.overall_auc, test.overall_auc);
        assert_eq!(report.overall_logloss, test.overall_logloss);
        let vs_self = cmd_eval(&runs[0].checkpoint, &data_dir.join("test.csv"), Some(&runs[0].checkpoint)).unwrap();
        assert_eq!(vs_self.relaimpr_vs_baseline, Some(0.0));
    }

    #[test]
    fn multiple_runs_get_directories() {
        let mut cfg = small_config();
        cfg.num_runs = 2;
        cfg.max_epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let runs = cmd_train(&cfg, dir.path()).unwrap();
        assert_ne!(runs[0].seed, runs[1].seed);
        assert!(dir.path().join("run_1/model.json").exists());
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn bench_needs_repetitions() {
        assert!(matches!(cmd_bench(&[], Path::new("x.csv"), 0), Err(Error::Config(_))));
    }

    #[test]
    fn bench_reports_every_model() {
        let cfg = small_config();
        let data = load_data(&cfg).unwrap();
        let h = cfg.build_model(data.schema(), 1).unwrap();
        let sb = RunConfig {
            model_kind: ModelKind::SharedBottom,
            ..cfg.clone()
        }
        .build_model(data.schema(), 1)
        .unwrap();
        let test = data.test.unwrap();
        let report = bench_models(&[("h".into(), h, test.clone()), ("sb".into(), sb, test)], 3).unwrap();
        assert_eq!(report.entries.len(), 2);
        assert!(report.entries.iter().all(|e| e.timings_s.len() == 3));
        assert!(report.entries.iter().any(|e| e.increase_pct == 0.0));
    }

    #[test]
    fn attention_dump_rejects_shared_bottom() {
        let cfg = RunConfig {
            model_kind: ModelKind::SharedBottom,
            ..small_config()
        };
        let data = load_data(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sb.json");
        save_checkpoint(&cfg.build_model(data.schema(), 0).unwrap(), None, &path).unwrap();
        assert!(matches!(
            cmd_dump_attention(&path, &dir.path().join("a.csv")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_ablation_variant() {
        assert!(ablation_settings(&HierRecSettings::default(), "-X").is_err());
    }
}
