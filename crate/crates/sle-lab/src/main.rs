use std::process::ExitCode;

fn main() -> ExitCode {
    sle_lab::cli::main()
}
