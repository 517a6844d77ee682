use clap::Parser;

mod commands;
mod config;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = config::Cli::parse();
    std::process::exit(commands::run(cli));
}
