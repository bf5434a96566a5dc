//! Workflow front door: prepare, train, infer, eval, driven by one
//! experiment configuration file.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use speechlm::config::ExperimentConfig;
use speechlm::workflow;

#[derive(Parser)]
#[command(name = "speechlm", version, about = "Desk-scale speech language model workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the training seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the output root from the config.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.training.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train tokenizers, build the vocabulary, tokenize every dataset.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Generate the bundled synthetic corpus first.
        #[arg(long)]
        synthesize: bool,
    },
    /// Run the fused multitask training loop.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from an existing checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Generate outputs for one task and split.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "NAME")]
        task: String,
        #[arg(long, value_name = "NAME", default_value = "test")]
        split: String,
    },
    /// Score inference outputs against the references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "NAME")]
        task: String,
        #[arg(long, value_name = "NAME", default_value = "test")]
        split: String,
    },
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Prepare { common, synthesize } => {
            let cfg = common.load()?;
            let report = workflow::cmd_prepare(&cfg, synthesize)?;
            println!(
                "prepare: {} manifests written, {} unchanged, {} rejected examples, {} id mismatches",
                report.written.len(),
                report.unchanged.len(),
                report.rejects,
                report.id_mismatches
            );
            Ok(())
        }
        Command::Train { common, resume } => {
            let cfg = common.load()?;
            let report = workflow::cmd_train(&cfg, resume.as_deref())?;
            println!(
                "train: {} steps, final loss {:.6}, best valid {:.6}",
                report.steps, report.final_loss, report.best_valid_loss
            );
            println!("checkpoint: {}", report.final_checkpoint.display());
            Ok(())
        }
        Command::Infer {
            common,
            task,
            split,
        } => {
            let cfg = common.load()?;
            let report = workflow::cmd_infer(&cfg, &task, &split)?;
            for (item, path) in &report.outputs {
                println!("infer: {item} -> {}", path.display());
            }
            if !report.incomplete.is_empty() {
                println!("infer: {} incomplete generations", report.incomplete.len());
            }
            Ok(())
        }
        Command::Eval {
            common,
            task,
            split,
        } => {
            let cfg = common.load()?;
            let report = workflow::cmd_eval(&cfg, &task, &split)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
