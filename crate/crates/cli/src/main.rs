//! `preact` binary: run, eval, ablate-retention, harvest-bank, report.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use preact_cli::config::ExperimentConfig;
use preact_cli::{cmd_ablate_retention, cmd_eval, cmd_harvest_bank, cmd_report, cmd_run};
use preact_cli::{CliError, EvalArgs, Overrides};

#[derive(Parser)]
#[command(name = "preact", version, about = "Prediction-before-action agent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment grid and write trajectory files.
    Run(GridArgs),
    /// Compute metrics over trajectory files and write a report.
    Eval(EvalCliArgs),
    /// Compare prediction retention 0 / 1 / all for the predictive framework.
    AblateRetention(GridArgs),
    /// Collect prediction blocks from trajectories into a bank file.
    HarvestBank(HarvestArgs),
    /// Render a saved report as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance ids or family names, comma-separated.
    #[arg(long, value_delimiter = ',')]
    instances: Option<Vec<String>>,
    /// Frameworks, comma-separated: PreAct, ReAct, ActOnly.
    #[arg(long, value_delimiter = ',')]
    frameworks: Option<Vec<String>>,
    /// History modes, comma-separated: 0, 1, all, optionally with +ref.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    /// Seeds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Scripted backend policy file.
    #[arg(long)]
    scripted: Option<PathBuf>,
    /// Live backend base URL (explicit opt-in; needs --live-model).
    #[arg(long)]
    live_base_url: Option<String>,
    /// Live backend model name.
    #[arg(long)]
    live_model: Option<String>,
    /// Environment variable holding the live API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Trials per reflection cell.
    #[arg(long)]
    reflexion_trials: Option<usize>,
    /// Candidate turns sampled per round.
    #[arg(long)]
    tot_n: Option<usize>,
    /// Prediction hallucination probability.
    #[arg(long)]
    tot_h: Option<f64>,
    /// Prediction bank file for injection runs.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Backend call budget for the whole batch.
    #[arg(long)]
    budget: Option<u64>,
    /// Concurrent episode workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Re-asks per turn after an unparseable reply.
    #[arg(long)]
    max_parse_retries: Option<u32>,
}

impl GridArgs {
    fn into_config(self) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            instances: self.instances,
            frameworks: self.frameworks,
            modes: self.modes,
            reflexion_trials: self.reflexion_trials,
            tot_n: self.tot_n,
            tot_h: self.tot_h,
            bank: self.bank,
            scripted: self.scripted,
            live_base_url: self.live_base_url,
            live_model: self.live_model,
            api_key_env: self.api_key_env,
            seeds: self.seeds,
            out_dir: self.out_dir,
            call_budget: self.budget,
            workers: self.workers,
            max_parse_retries: self.max_parse_retries,
        };
        ExperimentConfig::load(self.config.as_deref(), &overrides)
            .map_err(|e| CliError::Validation(e.to_string()))
    }
}

#[derive(Args)]
struct EvalCliArgs {
    /// Trajectory files or directories of .jsonl files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Scripted judge policy file; enables the judge metrics.
    #[arg(long)]
    judge: Option<PathBuf>,
    /// Directory for report.jsonl and table.txt.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Randomize judged pair presentation order per pair.
    #[arg(long)]
    randomize_order: bool,
    /// Seed for presentation-order randomization.
    #[arg(long, default_value_t = 0)]
    judge_seed: u64,
}

#[derive(Args)]
struct HarvestArgs {
    /// Trajectory files or directories of .jsonl files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Bank file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.jsonl produced by eval.
    report: PathBuf,
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Run(args) => {
            let config = args.into_config()?;
            let outcome = cmd_run(&config)?;
            print!("{}", outcome.summary_table);
            println!(
                "cells: {} done, {} failed, {} skipped, {} incompatible",
                outcome.done, outcome.failed, outcome.skipped, outcome.incompatible
            );
            println!("manifest: {}", outcome.manifest_path.display());
            Ok(if outcome.is_partial() { 2 } else { 0 })
        }
        Command::Eval(args) => {
            let outcome = cmd_eval(&EvalArgs {
                inputs: args.inputs,
                judge: args.judge,
                out_dir: args.out_dir,
                randomize_order: args.randomize_order,
                judge_seed: args.judge_seed,
            })?;
            print!("{}", outcome.table);
            if let Some(path) = outcome.report_path {
                println!("report: {}", path.display());
            }
            Ok(0)
        }
        Command::AblateRetention(args) => {
            let config = args.into_config()?;
            let outcome = cmd_ablate_retention(&config)?;
            print!("{}", outcome.table);
            println!("ablation: {}", outcome.ablation_path.display());
            println!("manifest: {}", outcome.run.manifest_path.display());
            Ok(if outcome.run.is_partial() { 2 } else { 0 })
        }
        Command::HarvestBank(args) => {
            let (trajectories, entries) = cmd_harvest_bank(&args.inputs, &args.out)?;
            println!(
                "harvested {entries} prediction entries from {trajectories} trajectories into {}",
                args.out.display()
            );
            Ok(0)
        }
        Command::Report(args) => {
            print!("{}", cmd_report(&args.report)?);
            Ok(0)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
