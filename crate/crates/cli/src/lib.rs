//! Command-line front end: flag and config-file parsing, subcommand
//! dispatch and artifact writing.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use std::ffi::OsString;

use clap::Parser;

use crate::commands::CommandError;
use crate::config::{resolve, Cli, Command};

/// Parses `args` (program name first), runs the subcommand and writes its
/// files. Returns the process exit code: 0 on success, 1 on a failed
/// verification or computation, 2 on a usage or configuration error.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(&cli.flags, &cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut ok = true;
    let result = match &cli.command {
        Command::Flow => commands::flow_curves(&cfg),
        Command::Survival => commands::survival_curve(&cfg),
        Command::Simulate => commands::simulate_ensemble(&cfg),
        Command::Counting => commands::counting_curves(&cfg),
        Command::Density => commands::density_profile(&cfg),
        Command::Resolvent { spec } => commands::resolvent_solution(&cfg, spec),
        Command::Verify { quick, only } => commands::verify_suite(*quick, only).map(|(art, passed)| {
            ok = passed;
            art
        }),
    };
    let artifact = match result {
        Ok(a) => a,
        Err(CommandError::Usage(m)) => {
            eprintln!("error: {m}");
            return 2;
        }
        Err(CommandError::Failed(m)) => {
            eprintln!("error: {m}");
            return 1;
        }
    };
    match output::write(&artifact, &cfg) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: writing {}: {e}", cfg.out.display());
            return 1;
        }
    }
    if ok {
        0
    } else {
        1
    }
}
