use std::process::ExitCode;

use clap::Parser;
use deepresearch::cli::{run, Cli, Status};

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            if outcome.status() != Status::Ok {
                eprintln!("{}", outcome.summary());
            } else {
                log::info!("{}", outcome.summary());
            }
            Ok(ExitCode::from(outcome.status() as u8))
        }
        Err(e) => {
            eprintln!("{}", e.summary());
            Ok(ExitCode::from(e.status() as u8))
        }
    }
}
