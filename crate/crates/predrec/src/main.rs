use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(predrec::cli::main_from(std::env::args_os()))
}
