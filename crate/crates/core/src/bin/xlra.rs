use std::io;

use xlra::cli::run_cli;
use xlra::engine::Runner;

fn main() {
    let runner = Runner::from_env();
    let code = run_cli(std::env::args_os(), &runner, &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
