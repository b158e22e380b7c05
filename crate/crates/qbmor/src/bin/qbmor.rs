use std::process::ExitCode;

fn main() -> ExitCode {
    qbmor::cli::run()
}
