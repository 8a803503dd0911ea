use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(e2e_st::experiment::cli::main_with_args(std::env::args_os().collect()))
}
