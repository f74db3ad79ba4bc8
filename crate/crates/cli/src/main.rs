use clap::Parser;

use ctxcomp_cli::cli::Cli;
use ctxcomp_cli::commands;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = commands::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
