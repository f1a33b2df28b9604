use clap::Parser;
use glt_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(1);
    }
}
