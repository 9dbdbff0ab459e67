use clap::Parser;

fn main() {
    let cli = estfuse_cli::Cli::parse();
    if let Err(e) = estfuse_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
