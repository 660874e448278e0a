use std::io::Write;

use clap::Parser;

use primlight_cli::{exit, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::code(&e)
        }
    };
    std::io::stdout().flush().ok();
    std::process::exit(code);
}
