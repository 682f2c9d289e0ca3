use std::process::ExitCode;

fn main() -> ExitCode {
    diffcoder::cli::main_with(std::env::args_os())
}
