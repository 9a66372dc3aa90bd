//! `itr` — develop and evaluate individualized treatment rules.
//!
//! Exit codes: 0 success, 1 validation or I/O problem, 2 numerical failure
//! inside model fitting. Every report is written atomically and embeds the
//! resolved configuration and seed that produced it.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::io::{Failure, Outcome};

#[derive(Parser)]
#[command(
    name = "itr",
    version,
    about = "Develop and evaluate individualized treatment rules from tabular data"
)]
struct Cli {
    /// TOML run configuration (required by every subcommand except
    /// `simulate`, which has built-in defaults).
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    /// Any value yields byte-identical reports.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Base seed; overrides the config file and the ITR_SEED variable.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a CSV into development/validation/evaluation parts.
    Split(SplitArgs),
    /// Develop a treatment rule on development data.
    Build(BuildArgs),
    /// Evaluate a saved rule on independent data.
    Evaluate(EvaluateArgs),
    /// Build candidate rules and rank them on validation data.
    Compare(CompareArgs),
    /// Run the seeded simulation study grid.
    Simulate(SimulateArgs),
}

#[derive(Args)]
pub struct SplitArgs {
    /// Input CSV (falls back to [data].input in the config).
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Directory for the part CSVs and split_manifest.json.
    #[arg(long, value_name = "DIR", default_value = "splits")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct BuildArgs {
    /// Development CSV (falls back to [data].development).
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Where to write the rule file.
    #[arg(long, value_name = "FILE", default_value = "rule.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Evaluation CSV (falls back to [data].evaluation).
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Rule file produced by `build` or `compare`.
    #[arg(long, value_name = "FILE", default_value = "rule.json")]
    pub rule: PathBuf,
    /// Where to write the evaluation report.
    #[arg(long, value_name = "FILE", default_value = "evaluation.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Development CSV (falls back to [data].development).
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Validation CSV (falls back to [data].validation).
    #[arg(long, value_name = "FILE")]
    pub val: Option<PathBuf>,
    /// Where to write the ranked validation report.
    #[arg(long, value_name = "FILE", default_value = "validation_report.json")]
    pub out: PathBuf,
    /// Directory for the per-candidate rule files.
    #[arg(long, value_name = "DIR", default_value = "rules")]
    pub rules_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 200 replications, 10,000-row evaluation populations.
    Desk,
    /// 1,000 replications, 10,000-row evaluation populations.
    Full,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Named replication budget; explicit flags below override it.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Development-set sizes, comma separated (default 50,500,1000).
    #[arg(long, value_delimiter = ',', value_name = "N,..")]
    pub sizes: Option<Vec<usize>>,
    /// Replications per (method, size) cell.
    #[arg(long, value_name = "N")]
    pub replications: Option<usize>,
    /// Rows in each per-replication evaluation population.
    #[arg(long, value_name = "N")]
    pub n_eval: Option<usize>,
    /// Rows behind the closed-form benchmark estimates.
    #[arg(long, value_name = "N")]
    pub benchmark_rows: Option<usize>,
    /// Where to write the study table as CSV.
    #[arg(long, value_name = "FILE", default_value = "study.csv")]
    pub out_csv: PathBuf,
    /// Where to write the full study grid as JSON.
    #[arg(long, value_name = "FILE", default_value = "study.json")]
    pub out_json: PathBuf,
}

fn load_config(path: Option<&PathBuf>, optional: bool) -> Outcome<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None if optional => Ok(RunConfig::default()),
        None => Err(Failure::validation(
            "this subcommand needs a configuration file: pass --config <FILE>",
        )),
    }
}

fn dispatch(cli: Cli) -> Outcome<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::validation(format!("cannot configure the thread pool: {e}")))?;
    }
    let optional_config = matches!(cli.command, Command::Simulate(_));
    let config = load_config(cli.config.as_ref(), optional_config)?;
    match cli.command {
        Command::Split(args) => commands::run_split(config, args, cli.seed),
        Command::Build(args) => commands::run_build(config, args, cli.seed),
        Command::Evaluate(args) => commands::run_evaluate(config, args, cli.seed),
        Command::Compare(args) => commands::run_compare(config, args, cli.seed),
        Command::Simulate(args) => commands::run_simulate(config, args, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code)
        }
    }
}
