use std::process::ExitCode;

use clap::Parser;

use celltide::cli::{log_level, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(log_level(std::env::var("CELLTIDE_LOG").ok().as_deref()))
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();

    match cli.command.run() {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
