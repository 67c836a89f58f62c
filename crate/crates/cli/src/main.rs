use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod evaluate;
mod experiment;
mod generate;
mod learn;

/// Learn linear second-order RNNs from sequence data by Hankel tensor recovery.
#[derive(Debug, Parser)]
#[command(name = "l2rnn", version)]
struct Cli {
    /// Worker threads for sweeps; overrides L2RNN_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Repeat for more log output (RUST_LOG takes precedence).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic training/test datasets and a manifest.
    Generate(generate::GenerateArgs),
    /// Learn a model from datasets and write it with a run report.
    Learn(learn::LearnArgs),
    /// Score a model on a dataset (MSE, RMSE, MAE, MAPE).
    Evaluate(evaluate::EvaluateArgs),
    /// Run a (method x N x noise x rank x seed) sweep to CSV.
    Experiment(experiment::ExperimentArgs),
}

/// `--config` shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// JSON or TOML file (by extension); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Exit status 1: bad input from the user.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn is_user_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        if c.is::<UserError>() || c.is::<std::io::Error>() || c.is::<serde_json::Error>() || c.is::<toml::de::Error>() {
            return true;
        }
        matches!(
            c.downcast_ref::<l2rnn::Error>(),
            Some(
                l2rnn::Error::InvalidArgument(_)
                    | l2rnn::Error::ShapeMismatch(_)
                    | l2rnn::Error::Parse { .. }
                    | l2rnn::Error::Io(_)
                    | l2rnn::Error::Json(_)
            )
        )
    })
}

pub fn threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var("L2RNN_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| user(format!("L2RNN_THREADS must be a positive integer, got {v:?}"))),
        _ => Ok(None),
    }
}

fn init_logging(verbose: u8, quiet_default: bool) {
    let level = match (verbose, quiet_default) {
        (0, true) => "error",
        (0, false) => "warn",
        (1, _) => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let quiet = matches!(cli.command, Command::Experiment(_));
    init_logging(cli.verbose, quiet);
    let threads = threads(cli.threads)?;
    match cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Learn(a) => learn::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Experiment(a) => experiment::run(a, threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            if is_user_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
        Err(_) => ExitCode::from(2),
    }
}
