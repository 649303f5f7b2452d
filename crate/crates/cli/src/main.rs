mod args;
mod run;

use std::process::ExitCode;

use clap::Parser;
use hypergp::Error;
use serde_json::json;

use args::{merge_config, Cli};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn variant_name(e: &Error) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric()).collect()
}

fn fail(e: &Error) -> ExitCode {
    let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
    let diag = json!({ "error": variant_name(e), "message": e.to_string(), "exit_code": code });
    eprintln!("error: {e}");
    eprintln!("{diag}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let argv = match merge_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
