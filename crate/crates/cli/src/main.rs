//! `npcc` command-line pipeline.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 malformed input, 5 invalid
//! parameters, 6 computation failure.

mod args;
mod commands;
mod failure;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use failure::{Failure, Outcome};

fn main() {
    let code = match run(std::env::args().collect()) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("npcc: {f}");
            f.code()
        }
    };
    std::process::exit(code);
}

fn run(argv: Vec<String>) -> Outcome<()> {
    let argv = args::expand_config(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.print()?;
            return Ok(());
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let line = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("bad arguments");
            return Err(Failure::usage(line.trim_start_matches("error: ")));
        }
    };
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Failure::validation("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(Failure::validation)?;
    }
    commands::run(&cli.command)
}
