//! `tspsense`: generate instances, label them exactly, score candidates with
//! baselines and probes, evaluate rankings, render tours, and serve the
//! interactive API.
//!
//! Exit codes: 0 success, 1 invalid input, 2 partial failure, 3 internal error.

mod args;
mod commands;
mod error;
mod manifest;
mod render;

use clap::error::ErrorKind;
use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp_millis().init();

    let ctx = commands::Ctx { argv: std::env::args().skip(1).collect(), data_dir: cli.data_dir.clone() };
    match commands::run(&ctx, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
