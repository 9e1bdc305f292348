use std::process::ExitCode;

use boxtrack_cli::app;
use env_logger::Env;

fn main() -> ExitCode {
    let cli = match app::parse(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let default_level = if cli.command.common().verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(Env::new().filter_or("BOXTRACK_LOG", default_level)).init();

    match app::run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
