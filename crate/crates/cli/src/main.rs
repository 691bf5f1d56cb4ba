use std::process::ExitCode;

fn main() -> ExitCode {
    layerfet::cli::run(std::env::args_os())
}
