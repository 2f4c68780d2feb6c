mod args;
mod commands;
mod inputs;

use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, Command};
use inputs::Inputs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] nonrigid::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) if e.is_usage() => 2,
            CliError::Lib(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        if self.exit_code() == 2 {
            "usage"
        } else {
            "numerical"
        }
    }
}

fn emit(report: &Value, output: Option<&str>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    match output {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| CliError::Usage(format!("{path}: {e}")))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn error_report(err: &CliError) -> Value {
    json!({ "error": { "kind": err.kind(), "message": err.to_string() } })
}

fn run(cli: &Cli) -> Result<Value, CliError> {
    let mut inputs = Inputs::new();
    let seed = cli.seed;
    let out = match &cli.command {
        Command::Simulate(a) => commands::simulate_cmd(a, seed, &mut inputs)?,
        Command::Essential(a) => commands::essential_cmd(a, &mut inputs)?,
        Command::RecoverAffine(a) => commands::recover_affine_cmd(a, seed, &mut inputs)?,
        Command::Invariants(a) => commands::invariants_cmd(a, seed, &mut inputs)?,
        Command::Implicitize(a) => commands::implicitize_cmd(a, seed, &mut inputs)?,
        Command::FitConstraint(a) => commands::fit_constraint_cmd(a, seed, &mut inputs)?,
        Command::SelectModel(a) => commands::select_model_cmd(a, seed, &mut inputs)?,
        Command::RecoverPoly(a) => commands::recover_poly_cmd(a, seed, &mut inputs)?,
        Command::DimCheck(a) => commands::dim_check_cmd(a, &mut inputs)?,
        Command::CriticalCheck(a) => commands::critical_check_cmd(a, &mut inputs)?,
    };
    let name = serde_json::to_value(&cli.command).expect("command serializes");
    let (command, args) = match name {
        Value::Object(map) => map.into_iter().next().expect("one subcommand"),
        _ => unreachable!("subcommands serialize as objects"),
    };
    Ok(json!({
        "command": command,
        "config": { "args": args, "seed": seed, "settings": out.config },
        "inputs_digest": inputs.digest(),
        "results": out.results,
        "residuals": out.residuals,
        "warnings": out.warnings,
        "provenance": {
            "seed": seed,
            "nonrigid_cli": env!("CARGO_PKG_VERSION"),
            "nonrigid": nonrigid::VERSION,
        },
    }))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(value) = std::env::var("NONRIGID_THREADS") {
        let n: usize = value.parse().map_err(|_| {
            CliError::Usage(format!("NONRIGID_THREADS must be a count, got `{value}`"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string());
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&error_report(&err)).expect("error serializes")
            );
            return ExitCode::from(2);
        }
    };
    let result = configure_threads()
        .and_then(|()| run(&cli))
        .and_then(|r| emit(&r, cli.output.as_deref()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&error_report(&err)).expect("error serializes")
            );
            ExitCode::from(err.exit_code())
        }
    }
}
