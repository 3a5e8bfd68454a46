use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{train_step, AnyModel, CtrModel};
use crate::nn::AdamConfig;
use crate::seed;

/// Rows scored per parallel chunk during evaluation.
pub const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub run: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
    pub wall_time_s: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch, rounded to 32 bits.
    pub model: AnyModel,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub epochs_run: usize,
    pub history: Vec<EpochLog>,
}

/// Eval-mode report of `model` on `ds`.
pub fn evaluate_model(model: &AnyModel, ds: &Dataset) -> Result<EvalReport> {
    let scores = model.freeze()?.predict_dataset(ds, EVAL_CHUNK)?;
    evaluate(ds, &scores)
}

fn rounded(model: &AnyModel) -> AnyModel {
    let mut m = model.clone();
    m.params_mut().round_to_f32();
    m
}

/// Adam on mean BCE with per-epoch validation and early stopping on
/// validation AUC. Validation scores the 32-bit rounded parameters, which are
/// exactly what a checkpoint stores. A learning rate of 0 skips the update.
pub fn train(
    mut model: AnyModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    settings: &TrainSettings,
    run_seed: u64,
    run: usize,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let adam = AdamConfig {
        lr: settings.learning_rate,
        ..AdamConfig::default()
    };
    let start = Instant::now();
    let mut best: Option<(AnyModel, usize, EvalReport)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut global_batch = 0usize;
    for epoch in 0..settings.max_epochs {
        let batches = make_batches(train_ds, settings.batch_size, run_seed, epoch as u64, true)?;
        let mut loss_sum = 0.0;
        for (i, batch) in batches.iter().enumerate() {
            let dropout_seed = seed::derive(run_seed, &[seed::name_id("dropout"), epoch as u64, i as u64]);
            let loss = train_step(&mut model, batch, dropout_seed)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: global_batch,
                    loss,
                });
            }
            if settings.learning_rate > 0.0 {
                adam.step(model.params_mut())?;
            }
            loss_sum += loss * batch.len() as f64;
            global_batch += 1;
        }
        let snapshot = rounded(&model);
        let report = evaluate_model(&snapshot, val_ds)?;
        let improved = best.as_ref().is_none_or(|(_, _, b)| report.overall_auc > b.overall_auc);
        let entry = EpochLog {
            run,
            epoch,
            train_loss: loss_sum / train_ds.len() as f64,
            val_auc: report.overall_auc,
            val_logloss: report.overall_logloss,
            wall_time_s: start.elapsed().as_secs_f64(),
            best: improved,
        };
        let line = serde_json::to_string(&entry)?;
        writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))?;
        history.push(entry);
        if improved {
            best = Some((snapshot, epoch, report));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= settings.early_stop_patience {
                break;
            }
        }
    }
    let (model, best_epoch, best_val) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val,
        epochs_run: history.len(),
        history,
    })
}
