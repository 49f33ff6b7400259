use clap::Parser;

fn main() {
    let cli = nvgrav_cli::Cli::parse();
    if let Err(e) = nvgrav_cli::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
