use std::process::ExitCode;

fn main() -> ExitCode {
    thn_core::cli::main_with(std::env::args_os())
}
