//! Run configuration, the training loop, and the command implementations
//! behind the CLI verbs.

mod commands;
mod config;
mod train;

pub use commands::{
    ablate_on, ablation_settings, bench_models, cmd_ablate, cmd_bench, cmd_dump_attention, cmd_eval,
    cmd_gen_data, cmd_gradcheck, cmd_train, gradcheck_hierrec_settings, gradcheck_models, gradcheck_schema,
    load_dataset_for, randomize_params, AblationReport, AblationRun, BenchEntry, BenchReport, GradCheckCase,
    GradCheckSummary, RunSummary, VariantSummary, ABLATION_VARIANTS, BENCH_BATCH, GRADCHECK_PARAM_STD,
    GRADCHECK_RANDOMIZE_SEED, GRADCHECK_SEED,
};
pub use config::{load_data, CsvEncoding, CsvSource, RunConfig, RunData, SchemaSource};
pub use train::{evaluate_model, train, EpochLog, TrainOutcome, TrainSettings, EVAL_CHUNK};
