use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mbgnn_lab::config::Config;
use mbgnn_lab::experiments::{self, RunContext};
use mbgnn_lab::LabError;

/// Mini-batch graph neural network laboratory.
#[derive(Parser)]
#[command(name = "mbgnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and checkpoint it.
    Train(RunArgs),
    /// Sweep the neighborhood size k.
    AblateK(RunArgs),
    /// Sweep the training batch size.
    AblateBatch(RunArgs),
    /// Accuracy under graded input corruption (transductive protocol).
    Robust(RunArgs),
    /// simBA black-box attack against the trained model.
    Attack(RunArgs),
    /// Verify the perturbation-attenuation ratios numerically.
    PropCheck(RunArgs),
    /// Train a small GAN on a Gaussian ring and track NDB.
    Gan(RunArgs),
    /// Score generated samples against a reference set with NDB.
    Ndb(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; all artifacts land here.
    #[arg(long, default_value = "mbgnn-out")]
    out: PathBuf,
    /// Run seed; overrides the config's `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides of the form key=value (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn build_context(args: &RunArgs) -> Result<RunContext, LabError> {
    let mut cfg = Config::from_file(&args.config)?;
    cfg.apply_overrides(&args.overrides)?;
    RunContext::new(cfg, args.out.clone(), args.seed)
}

fn dispatch(command: &Command) -> Result<(), LabError> {
    match command {
        Command::Train(args) => experiments::train_exp::run(&build_context(args)?),
        Command::AblateK(args) => experiments::ablate::run_k(&build_context(args)?),
        Command::AblateBatch(args) => experiments::ablate::run_batch(&build_context(args)?),
        Command::Robust(args) => experiments::robust_exp::run(&build_context(args)?),
        Command::Attack(args) => experiments::attack_exp::run(&build_context(args)?),
        Command::PropCheck(args) => experiments::prop_check::run(&build_context(args)?),
        Command::Gan(args) => experiments::gan_exp::run(&build_context(args)?),
        Command::Ndb(args) => experiments::ndb_exp::run(&build_context(args)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ LabError::Config(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
