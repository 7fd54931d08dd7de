mod eval;
mod export;
mod inputs;
mod preprocess;
mod probe;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Weakly supervised joint image/word embeddings for catalog data.
#[derive(Parser)]
#[command(name = "weakcat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled catalog.
    GenSynthetic(synth::Args),
    /// Build the vocabulary, the training/validation datasets and a stats report.
    Preprocess(preprocess::Args),
    /// Train an embedding model.
    Train(train::Args),
    /// Evaluate top-k retrieval accuracy.
    EvalRetrieval(eval::Args),
    /// Train and evaluate a linear probe on frozen features.
    Probe(probe::Args),
    /// Dump visual features as tab-separated values.
    ExportFeatures(export::Args),
}

/// Bad flag values detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<weakcat::Error>() {
            return match e {
                weakcat::Error::InvalidConfig(_) => 1,
                e if e.is_numeric() => 3,
                _ => 2,
            };
        }
    }
    2
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("WEAKCAT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("WEAKCAT_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenSynthetic(a) => synth::run(a),
        Command::Preprocess(a) => preprocess::run(a),
        Command::Train(a) => train::run(a),
        Command::EvalRetrieval(a) => eval::run(a),
        Command::Probe(a) => probe::run(a),
        Command::ExportFeatures(a) => export::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
