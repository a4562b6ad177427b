use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(attncap::cli::run(std::env::args()) as u8)
}
