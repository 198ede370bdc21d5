use clap::error::ErrorKind;
use clap::Parser;

mod commands;

use commands::Cli;

fn main() {
    std::process::exit(run());
}

/// Exit codes: 0 success (including --help/--version), 1 usage or
/// configuration error, 2 runtime failure.
fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { 0 } else { 1 };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(babble_core::Error::Config(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
