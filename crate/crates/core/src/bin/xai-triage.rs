use clap::Parser;
use xai_triage::cli::{error_json, execute, init_logging, Cli};

fn main() {
    init_logging();
    let cli = Cli::parse();
    if let Err(e) = execute(&cli) {
        eprintln!("{}", error_json(&e));
        std::process::exit(1);
    }
}
