use std::io::Write;

use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = mhqg::cli::Cli::parse();
    let out = mhqg::cli::execute(&cli)?;
    // a closed pipe (`| head`) is not an error
    let _ = writeln!(std::io::stdout(), "{out}");
    Ok(())
}
