use clap::Parser;
use orient_cli::{exit_with, run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    std::process::exit(exit_with(run(&cli, &mut stdout)));
}
