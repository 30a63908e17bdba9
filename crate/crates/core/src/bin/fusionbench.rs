use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use fusionbench::cli::{self, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Cli::parse();
    let name = args.command.name();
    match cli::run(&args).with_context(|| format!("{name} failed")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<fusionbench::Error>().map_or(2, cli::exit_code);
            ExitCode::from(code)
        }
    }
}
