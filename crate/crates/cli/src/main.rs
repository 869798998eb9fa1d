//! `cck`: consensus, kappa, prospective curves, binary evaluation and the
//! HTTP service from one binary.
//!
//! Exit codes: 0 success, 1 input or validation error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cck", version, about = "Consensus analysis for crowdsourced annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute per-question consensus and write one file set per question.
    Consensus(ConsensusArgs),
    /// Fleiss' kappa for one question.
    Kappa(KappaArgs),
    /// Simulate a crowd at several redundancies and write an accuracy curve.
    Prospective(ProspectiveArgs),
    /// Binary precision/recall/accuracy of a labeling against a reference.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Mv,
    Mm,
    Ds,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Args)]
struct EmArgs {
    /// Convergence threshold on the change of the objective.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Dirichlet smoothing strength.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Args)]
struct ConsensusArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    workers: Option<PathBuf>,
    /// Run configuration (JSON). Flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Comma-separated subset of questions.
    #[arg(long, value_delimiter = ',')]
    questions: Option<Vec<String>>,
    #[command(flatten)]
    em: EmArgs,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct KappaArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Label spaces and dependency rules.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
struct ProspectiveArgs {
    /// Fitted params file or hand-written profile.
    #[arg(long)]
    params: PathBuf,
    /// Number of synthetic tasks.
    #[arg(long, default_value_t = 10_000)]
    tasks: usize,
    /// Inclusive range `A:B` or list `3,6,10`.
    #[arg(long, default_value = "3:10")]
    redundancy: String,
    #[arg(long, value_delimiter = ',', default_value = "mv,mm")]
    models: Vec<ModelArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    em: EmArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// CSV with `task_id` and `label` (or `best_label`).
    #[arg(long)]
    predicted: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Label counted as positive; every other label is negative.
    #[arg(long)]
    positive_class: String,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Overrides CCK_BIND_ADDR.
    #[arg(long)]
    bind: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (name, outcome) = match cli.command {
        Command::Consensus(a) => ("consensus", commands::consensus(a)),
        Command::Kappa(a) => ("kappa", commands::kappa(a)),
        Command::Prospective(a) => ("prospective", commands::prospective(a)),
        Command::Evaluate(a) => ("evaluate", commands::evaluate(a)),
        Command::Serve(a) => ("serve", commands::serve(a)),
    };
    match outcome {
        Ok(summary) => {
            eprintln!("cck {name}: {summary}");
            ExitCode::SUCCESS
        }
        Err(message) => {
            eprintln!("cck {name}: error: {message}");
            ExitCode::from(1)
        }
    }
}
