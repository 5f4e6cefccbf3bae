use clap::Parser;
use hcb_spectra::cli::{self, Cli};

fn main() {
    let parsed = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = cli::init(&parsed).and_then(|_| cli::run(&parsed, args)) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
