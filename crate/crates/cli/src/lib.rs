//! Command-line harness: config loading, the four subcommands, and their
//! on-disk documents.

pub mod commands;
pub mod config;
pub mod report;

use std::fmt;
use std::path::PathBuf;

use famr::FamrError;

/// Failures surfaced to the user. `Config` exits with status 2 and
/// `Runtime` with status 1.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(e: impl fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    /// Classifies a library error: shape and size problems are the
    /// caller's configuration, everything else is a runtime failure.
    pub fn runtime(e: FamrError) -> Self {
        match e {
            FamrError::InvalidSpec(_)
            | FamrError::DimensionMismatch { .. }
            | FamrError::InvalidArgument(_)
            | FamrError::TooManyParameters { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// One parsed invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Train,
    Forget { checkpoint: Option<PathBuf> },
    Verify { checkpoints: Vec<PathBuf> },
}

/// Loads the config, applies overrides, and runs `command`.
pub fn run(command: &Command, config_path: &std::path::Path, overrides: &config::Overrides) -> Result<(), CliError> {
    let loaded = config::load(config_path, overrides)?;
    let exp = commands::Experiment::prepare(loaded)?;
    let out = exp.out_dir().to_path_buf();
    match command {
        Command::Train => {
            commands::cmd_train(&exp)?;
        }
        Command::Forget { checkpoint } => {
            let theta0 = checkpoint.clone().unwrap_or_else(|| out.join(commands::THETA0_FILE));
            commands::cmd_forget(&exp, &theta0, overrides.lambda_grid.as_deref())?;
        }
        Command::Verify { checkpoints } => {
            let (theta0, theta_star) = match checkpoints.as_slice() {
                [] => (out.join(commands::THETA0_FILE), out.join(commands::THETA_STAR_FILE)),
                [a, b] => (a.clone(), b.clone()),
                _ => {
                    return Err(CliError::Config(
                        "verify takes either no --checkpoint or two: theta0 then theta_star".into(),
                    ))
                }
            };
            commands::cmd_verify(&exp, &theta0, &theta_star)?;
        }
    }
    Ok(())
}
