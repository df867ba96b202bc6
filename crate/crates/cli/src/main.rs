use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use ipfe_cli::{run, Cli, CliError};

/// Synopsis of the subcommand named in argv, or of the whole tool.
fn synopsis() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = std::env::args().nth(1);
    match sub.as_deref().and_then(|name| cmd.find_subcommand_mut(name)) {
        Some(s) => s.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::from(1),
                _ => {
                    if !e.to_string().contains("Usage:") {
                        eprintln!("\n{}", synopsis());
                    }
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", synopsis());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
