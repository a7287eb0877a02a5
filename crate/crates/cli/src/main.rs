// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;

fn main() {
    let outcome = nullspace_cli::run(std::env::args_os());
    let _ = std::io::stdout().write_all(outcome.stdout.as_bytes());
    let _ = std::io::stderr().write_all(outcome.stderr.as_bytes());
    std::process::exit(outcome.exit_code);
}
