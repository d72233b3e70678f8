use clap::Parser;

fn main() {
    let cli = rotmatch_cli::Cli::parse();
    if let Err(e) = rotmatch_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
