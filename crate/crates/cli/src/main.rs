use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    omnigraph_cli::main_with(std::env::args(), std::io::stdout().lock()).into()
}
