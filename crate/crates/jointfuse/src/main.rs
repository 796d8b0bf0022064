use std::process::ExitCode;

fn main() -> ExitCode {
    jointfuse::cli::run(std::env::args_os())
}
