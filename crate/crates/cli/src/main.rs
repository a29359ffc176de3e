use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dal_cli::commands::{format_eval, write_eval_csv};
use dal_cli::{cmd_eval, cmd_generate, cmd_inspect, cmd_report, cmd_train, RunConfig};
use dal_core::Result;

/// Unsupervised cross-camera tracklet association.
#[derive(Parser)]
#[command(name = "dal", version)]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. --set seed=3
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to the configured feature and manifest paths
    Generate,
    /// Train on the configured dataset
    Train {
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the metrics as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a checkpoint
    Inspect { checkpoint: PathBuf },
    /// Per-iteration curve CSV from a training run
    Report {
        /// Training output directory (defaults to the configured output_dir)
        #[arg(long)]
        run: Option<PathBuf>,
        /// Evaluate saved checkpoints on the configured dataset
        #[arg(long)]
        with_eval: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set_pair(o)?;
    }
    match cli.command {
        Command::Generate => {
            let d = cmd_generate(&cfg)?;
            println!(
                "wrote {} frames, {} tracklets to {} and {}",
                d.frames.len(),
                d.frames.total_tracklets(),
                cfg.features.display(),
                cfg.manifest.display()
            );
        }
        Command::Train { resume } => {
            let s = cmd_train(&cfg, resume.as_deref())?;
            if let Some(r) = s.last {
                println!(
                    "iteration {}: loss_total {:.6} assoc_rate {:.4} true_match_rate {}",
                    r.iter,
                    r.loss_total.unwrap_or(f64::NAN),
                    r.assoc_rate,
                    r.true_match_rate.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
                );
            }
            println!("checkpoint {}", s.checkpoint.display());
            println!("metrics    {}", s.metrics.display());
        }
        Command::Eval { checkpoint, out } => {
            let r = cmd_eval(&checkpoint, &cfg.features, &cfg.manifest)?;
            print!("{}", format_eval(&r));
            if let Some(out) = out {
                write_eval_csv(&out, &r)?;
            }
        }
        Command::Inspect { checkpoint } => print!("{}", cmd_inspect(&checkpoint)?),
        Command::Report { run, with_eval, out } => {
            let dir = run.unwrap_or_else(|| cfg.output_dir.clone());
            let dataset = with_eval.then_some((cfg.features.as_path(), cfg.manifest.as_path()));
            let n = cmd_report(&dir, dataset, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
