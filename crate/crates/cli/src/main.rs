use clap::Parser;

fn main() {
    let cli = kinlab_cli::Cli::parse();
    std::process::exit(kinlab_cli::run(cli));
}
