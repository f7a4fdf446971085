use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match bokeh_cli::run(bokeh_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
