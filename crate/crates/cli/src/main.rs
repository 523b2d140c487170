use std::process::ExitCode;

use clap::Parser;
use grit_cli::{run, Cli, FATAL_EXIT};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FATAL_EXIT)
        }
    }
}
