use std::process::ExitCode;

fn main() -> ExitCode {
    h2t2::cli::main_with_args(std::env::args_os())
}
