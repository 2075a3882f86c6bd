//! `msfk`: split sampling, fixture inference, pseudo-labeling, evaluation
//! and gradient self-checks.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 data integrity, 4 numeric check
//! failure. `MSFK_THREADS` caps the worker pool; `RUST_LOG` sets verbosity.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("MSFK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("MSFK_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::SampleSplit(a) => commands::sample_split(a),
        Command::Infer(a) => commands::infer(a),
        Command::PseudoLabel(a) => commands::pseudo_label(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("msfk: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
