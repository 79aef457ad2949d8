//! `dialact`: batch entry point for corpus generation, feature extraction,
//! training, evaluation and the analysis reports.

mod args;
mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// Exit status for invalid input: bad flags, configs, labels or files.
const EXIT_VALIDATION: u8 = 1;
/// Exit status for failures while running a valid command.
const EXIT_RUNTIME: u8 = 2;

/// A command-level validation failure.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use dialact_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_)
                | E::Parse { .. }
                | E::Format { .. }
                | E::LabelMismatch(_) => EXIT_VALIDATION,
                E::Shape { .. } | E::Divergence(_) | E::Io { .. } => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::ExtractMfcc(a) => commands::extract_mfcc(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Predict(a) => commands::predict(a),
        Command::AblateQmark(a) => commands::ablate(a),
        Command::ReportSingleword(a) => commands::single_word(a),
        Command::Stats(a) => commands::stats_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
