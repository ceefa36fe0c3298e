use clap::Parser;
use hrshift_harness::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("hrshift: {e}");
        std::process::exit(e.exit_code());
    }
}
