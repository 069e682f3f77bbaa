use clap::Parser;

fn main() {
    let cli = cinesr::cli::Cli::parse();
    if let Err(err) = cinesr::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
