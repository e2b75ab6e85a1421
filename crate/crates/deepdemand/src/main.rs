use clap::Parser;

fn main() {
    let cli = deepdemand::cli::Cli::parse();
    let env = env_logger::Env::new().filter_or(deepdemand::config::ENV_LOG, "info");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
    if let Err(e) = deepdemand::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
