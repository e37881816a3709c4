use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use famr_cli::config::{parse_grid, Overrides};
use famr_cli::{CliError, Command};

#[derive(Parser)]
#[command(name = "famr", version, about = "Anchored machine unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate the dataset and train the baseline θ₀.
    Train(Common),
    /// Run the anchored forgetting loop from θ₀.
    Forget(Common),
    /// Compare against retraining and check the theoretical bounds.
    Verify(Common),
    /// Aggregate metrics.json files under a directory into report.csv.
    Report {
        /// Directory holding run outputs.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Input checkpoint. `forget` takes θ₀; `verify` takes θ₀ then θ*.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Output directory, replacing `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Comma-separated λ values. `forget` writes one subdirectory per value.
    #[arg(long)]
    lambda_grid: Option<String>,
}

fn overrides(c: &Common) -> Result<Overrides, CliError> {
    Ok(Overrides {
        seed: c.seed_override,
        lambda_grid: c.lambda_grid.as_deref().map(parse_grid).transpose()?,
        out: c.out.clone(),
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (command, common) = match cli.command {
        Sub::Report { out } => return famr_cli::report::cmd_report(&out).map(|_| ()),
        Sub::Train(c) => {
            if !c.checkpoint.is_empty() {
                return Err(CliError::Config("train does not take --checkpoint".into()));
            }
            (Command::Train, c)
        }
        Sub::Forget(c) => {
            if c.checkpoint.len() > 1 {
                return Err(CliError::Config("forget takes at most one --checkpoint".into()));
            }
            (Command::Forget { checkpoint: c.checkpoint.first().cloned() }, c)
        }
        Sub::Verify(c) => (Command::Verify { checkpoints: c.checkpoint.clone() }, c),
    };
    famr_cli::run(&command, &common.config, &overrides(&common)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
