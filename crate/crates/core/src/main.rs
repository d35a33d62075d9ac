use std::process::ExitCode;

fn main() -> ExitCode {
    hawkes_mf::cli::main_with_args(std::env::args_os())
}
