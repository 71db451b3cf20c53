use std::process::ExitCode;

use clap::Parser;
use hypervol_cli::{run, Cli};

fn main() -> ExitCode {
    // Usage errors are configuration errors; clap's own code 2 is reserved
    // for numerical failures here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
