//! `prl`: corpus generation, training, evaluation and experiment matrices.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prl_core::model::TraceMode;

const OVERRIDE_HELP: &str = "Config overrides as --key value, e.g. --head q --gamma-q 0.9 \
    --gamma-trace 0.9 --seed 1 --no-trace --trace-mode self. Keys are searched in the data, \
    model, train and eval sections; use --section.key when a name is ambiguous.";

#[derive(Parser)]
#[command(
    name = "prl",
    version,
    about = "Language models with predictive tag representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a tagged corpus from an HMM spec and report its perplexity floors.
    GenCorpus {
        spec: PathBuf,
        out: PathBuf,
        /// Floor report path (default: OUT.floor.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train one model and write a run directory.
    #[command(after_help = OVERRIDE_HELP)]
    Train {
        /// JSON run config; defaults are used for anything missing.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "OVERRIDES"
        )]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a tagged corpus.
    Eval {
        checkpoint: PathBuf,
        corpus: PathBuf,
        /// Label trace source; defaults to the mode used in training.
        #[arg(long)]
        trace_mode: Option<TraceMode>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        bptt_len: Option<usize>,
        /// Fail when more than this fraction of tokens is out of vocabulary.
        #[arg(long, default_value_t = 0.05)]
        max_oov_rate: f64,
        /// Report path (default: CHECKPOINT.eval.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a multi-seed experiment matrix.
    #[command(after_help = OVERRIDE_HELP)]
    Experiment {
        config: PathBuf,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "OVERRIDES"
        )]
        overrides: Vec<String>,
    },
}

/// An error with the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const DIVERGED: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: Self::DATA,
            message: message.into(),
        }
    }
}

impl From<prl_core::Error> for CliError {
    fn from(e: prl_core::Error) -> Self {
        use prl_core::Error as E;
        let code = match &e {
            E::Divergence { .. } | E::Numeric(_) => Self::DIVERGED,
            E::Contract(_) => Self::USAGE,
            _ => Self::DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CliError::USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenCorpus { spec, out, report } => commands::gen_corpus(&spec, &out, report),
        Command::Train { config, overrides } => commands::train(config.as_deref(), &overrides),
        Command::Eval {
            checkpoint,
            corpus,
            trace_mode,
            batch_size,
            bptt_len,
            max_oov_rate,
            out,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            corpus,
            trace_mode,
            batch_size,
            bptt_len,
            max_oov_rate,
            out,
        }),
        Command::Experiment { config, overrides } => commands::experiment(&config, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
