use std::process::ExitCode;

use clap::Parser;
use przcdp::cli::{exit_code, run_command, Cli, EXIT_RUNTIME};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.command.common().jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME as u8);
        }
    }
    match run_command(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
