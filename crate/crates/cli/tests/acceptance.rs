//! Runs the full acceptance suite; exits nonzero if any criterion fails.
//!
//! `cargo test -p qreset-cli --test acceptance`

use std::process::ExitCode;

use qreset_cli::verify::{criterion_count, format_row, run_one, Scale};

fn main() -> ExitCode {
    let scale = Scale { quick: false };
    let mut failed = 0;
    for id in 1..=criterion_count() {
        let c = run_one(id, scale);
        println!("{}", format_row(&c));
        failed += usize::from(!c.passed);
    }
    println!("{} of {} criteria passed", criterion_count() - failed, criterion_count());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
