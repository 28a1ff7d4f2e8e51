use clap::Parser;

fn main() {
    std::process::exit(whls::cli::main_with(whls::cli::Cli::parse()));
}
