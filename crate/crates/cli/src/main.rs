use std::process::ExitCode;

use clap::Parser;
use morphbench_cli::{run_cli, Cli, Status};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MORPHBENCH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Status::Config.code() as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run_cli(cli) {
        Ok(status) => {
            if status == Status::Partial {
                log::warn!("finished with warnings");
            }
            ExitCode::from(status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status.code() as u8)
        }
    }
}
