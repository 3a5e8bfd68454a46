use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hierrec::trainer::{
    cmd_ablate, cmd_bench, cmd_dump_attention, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_train, RunConfig,
};
use hierrec::{Error, Result};

#[derive(Parser)]
#[command(name = "hierrec", version, about = "Multi-scenario CTR models: HierRec and a Shared Bottom baseline")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed; for gen-data, the synthetic data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/val/test CSVs, schema.json and report.json.
    GenData,
    /// Train, keeping the best-validation checkpoint.
    Train,
    /// Score a checkpoint on a CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Baseline checkpoint for relative improvement.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Train full HierRec and its -MI, -I and -E variants.
    Ablate,
    /// Time single-threaded inference of one or more checkpoints.
    Bench {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
    /// Finite-difference check of the analytic gradients on tiny models.
    Gradcheck {
        #[arg(long, hide = true)]
        flip_sign_of: Option<String>,
    },
    /// Export per-scenario attention weights of a HierRec checkpoint.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(cli: &Cli, data_seed: bool) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        match (&mut cfg.synthetic, data_seed) {
            (Some(spec), true) => spec.seed = seed,
            _ => cfg.seed = seed,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData => {
            let cfg = load_config(cli, true)?;
            for f in cmd_gen_data(&cfg, &cli.out)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Train => {
            let cfg = load_config(cli, false)?;
            for r in cmd_train(&cfg, &cli.out)? {
                println!(
                    "run {}: best epoch {} of {}, val auc {:.4}, checkpoint {}",
                    r.run,
                    r.best_epoch,
                    r.epochs_run,
                    r.best_val_auc,
                    r.checkpoint.display()
                );
                if let Some(test) = &r.test {
                    print!("{}", test.table());
                }
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            baseline,
        } => {
            let report = cmd_eval(checkpoint, dataset, baseline.as_deref())?;
            print!("{}", report.table());
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Ablate => {
            let cfg = load_config(cli, false)?;
            let report = cmd_ablate(&cfg)?;
            print!("{}", report.table());
            write_json(&cli.out, "ablation.json", &report)?;
        }
        Command::Bench {
            checkpoints,
            dataset,
            repetitions,
        } => {
            let report = cmd_bench(checkpoints, dataset, *repetitions)?;
            print!("{}", report.table());
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Gradcheck { flip_sign_of } => {
            let summary = cmd_gradcheck(flip_sign_of.as_deref())?;
            print!("{}", summary.table());
            if !summary.passed {
                let bad: Vec<&str> = summary
                    .cases
                    .iter()
                    .flat_map(|c| c.violations.iter().map(String::as_str))
                    .collect();
                return Err(Error::GradCheck(format!("gradient mismatch in {}", bad.join(", "))));
            }
        }
        Command::DumpAttention { checkpoint } => {
            fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            let path = cli.out.join("attention.csv");
            cmd_dump_attention(checkpoint, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
