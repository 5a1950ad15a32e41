mod cli;
mod config;
mod dataio;
mod montage;
mod pnm;
mod selftest;

use clap::error::ErrorKind;
use clap::Parser;

// Exit codes: 0 success, 1 usage error, 2 runtime error.
fn main() {
    let cli = match cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}
