//! `mms`: run, sweep and inspect minimal-margin selective sampling experiments.
//!
//! Failures print one line to stderr,
//! `mms: error kind=<kind> [field=<field>] message="<text>"`, and exit with
//! a code per kind (see [`ErrorKind::exit_code`]).

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Unknown flag, missing argument or subcommand.
    Usage,
    /// A value that does not parse or violates a config invariant.
    InvalidValue,
    /// Dataset or checkpoint missing or unreadable.
    MissingData,
    /// Training or scoring failed after the config was accepted.
    Run,
    /// At least one run of a sweep failed.
    SweepFailed,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::InvalidValue => 3,
            ErrorKind::MissingData => 4,
            ErrorKind::Run => 5,
            ErrorKind::SweepFailed => 6,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::InvalidValue => "invalid_value",
            ErrorKind::MissingData => "missing_data",
            ErrorKind::Run => "run",
            ErrorKind::SweepFailed => "sweep_failed",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::InvalidValue,
            field: Some(field.to_owned()),
            message: message.into(),
        }
    }

    pub fn missing_data(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::MissingData,
            field: None,
            message: message.into(),
        }
    }

    pub fn from_core(e: mms_core::Error) -> Self {
        use mms_core::Error as E;
        let inner = match &e {
            E::Step { source, .. } => source.as_ref(),
            other => other,
        };
        let (kind, field) = match inner {
            E::Config { field, .. } => (ErrorKind::InvalidValue, Some((*field).to_owned())),
            E::Io { .. } => (ErrorKind::MissingData, None),
            E::IdxMagic { .. } | E::IdxTruncated { .. } | E::IdxCountMismatch { .. } | E::Csv { .. } => {
                (ErrorKind::MissingData, None)
            }
            _ => (ErrorKind::Run, None),
        };
        CliError {
            kind,
            field,
            message: e.to_string(),
        }
    }

    fn from_clap(e: &clap::Error) -> Self {
        use clap::error::ErrorKind as K;
        let kind = match e.kind() {
            K::InvalidValue | K::ValueValidation => ErrorKind::InvalidValue,
            _ => ErrorKind::Usage,
        };
        let first_line = e.to_string().lines().next().unwrap_or_default().to_owned();
        CliError {
            kind,
            field: None,
            message: first_line.trim_start_matches("error: ").to_owned(),
        }
    }

    pub fn diagnostic(&self) -> String {
        let mut line = format!("mms: error kind={}", self.kind.name());
        if let Some(field) = &self.field {
            line.push_str(&format!(" field={field}"));
        }
        let message = serde_json::to_string(&self.message).expect("strings serialize");
        line.push_str(&format!(" message={message}"));
        line
    }
}

impl From<mms_core::Error> for CliError {
    fn from(e: mms_core::Error) -> Self {
        CliError::from_core(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::from_clap(&e)),
    };

    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::ScorePool(a) => commands::score_pool(a),
        Command::GenData(a) => commands::gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.diagnostic());
    ExitCode::from(e.kind.exit_code())
}
