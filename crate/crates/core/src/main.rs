use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(soft_hjb::cli::run_from(std::env::args_os()))
}
