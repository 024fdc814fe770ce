use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use ida_cli::{configure_threads, run, Cli, EXIT_OK};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let status = match configure_threads().and_then(|_| run(&cli, &mut out)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(status as u8)
}
