use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use specalign::{run, Command, Overrides, RunConfig};
use specalign_core::train::LossKind;

#[derive(Parser)]
#[command(name = "specalign", version, about = "Align spectrum and molecule embeddings for candidate retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the selected command, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Write the split even when keys leak across parts.
    #[arg(long, global = true)]
    allow_leakage: bool,
    /// Rank only candidates sharing the record's formula.
    #[arg(long, global = true)]
    filter_formula: bool,
    /// Training objective.
    #[arg(long, global = true, value_enum)]
    loss: Option<Loss>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic dataset.
    Gen,
    /// Split records by a group key and audit leakage.
    Split,
    /// Train and write a checkpoint plus metrics log.
    Train,
    /// Recall@k of a checkpoint.
    Eval,
    /// Train/test distribution shift.
    Shift,
}

#[derive(ValueEnum, Clone, Copy)]
enum Loss {
    RegressionMs2mol,
    RegressionMol2ms,
    Inbatch,
    Candidate,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::RegressionMs2mol => LossKind::RegressionMs2mol,
            Loss::RegressionMol2ms => LossKind::RegressionMol2ms,
            Loss::Inbatch => LossKind::Inbatch,
            Loss::Candidate => LossKind::Candidate,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPECALIGN_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let command = match cli.command {
        Cmd::Gen => Command::Gen,
        Cmd::Split => Command::Split,
        Cmd::Train => Command::Train,
        Cmd::Eval => Command::Eval,
        Cmd::Shift => Command::Shift,
    };
    let config = match &cli.config {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    };
    let overrides = Overrides {
        seed: cli.seed,
        threads: Some(cli.threads),
        allow_leakage: cli.allow_leakage,
        filter_formula: cli.filter_formula,
        loss: cli.loss.map(LossKind::from),
    };
    match config.and_then(|c| run(command, c, &overrides)) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
