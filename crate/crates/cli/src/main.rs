use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(qreset_cli::run(std::env::args_os()))
}
