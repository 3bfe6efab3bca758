use std::io::Write;
use std::process::ExitCode;

use acbias_cli::args::Cli;
use acbias_cli::error::classify;
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match acbias_cli::run(&cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e).code() as u8)
        }
    }
}
