use std::io::Write;
use std::process::ExitCode;

use choicerbm::{cli, par};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    par::init_threads(cli::threads_from_env());
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    let _ = std::io::stdout().flush();
    ExitCode::from(code as u8)
}
