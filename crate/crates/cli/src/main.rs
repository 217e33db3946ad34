mod args;
mod commands;
mod error;
mod oracles;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;
use crate::error::CliError;

fn execute(cli: &Cli, argv: &[String]) -> Result<u8, CliError> {
    let outcome = commands::dispatch(&cli.command)?;
    let (dir, manifest) = run::persist(cli, argv, &outcome)?;
    println!("{}", outcome.stdout);
    eprintln!(
        "run {}: {} artifact(s) in {}",
        manifest.run_id,
        manifest.artifacts.len(),
        dir.display()
    );
    if let Some(failure) = &outcome.failure {
        eprintln!("error: {failure}");
        return Ok(1);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap exits with 2 on usage errors; 2 is reserved for oracle failures here
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(&cli, &argv[1..]) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
