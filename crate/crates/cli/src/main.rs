use std::process::ExitCode;

use clap::Parser;
use serde_json::Value;

use bsannot::{Cli, CliError, Command};

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Annotate(a) => {
            let out = bsannot::cmd_annotate(&a)?;
            print(&serde_json::json!({
                "v": 1,
                "manifest": out.manifest_path.display().to_string(),
                "labels": out.label_files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                "failed_channels": out.failed_channels,
            }));
        }
        Command::Eval(a) => print(&bsannot::cmd_eval(&a)?),
        Command::Adjust(a) => print(&bsannot::cmd_adjust(&a)?),
        Command::Synth(a) => print(&bsannot::cmd_synth(&a)?),
        Command::Train(a) => print(&bsannot::cmd_train(&a)?),
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::usage(e.to_string()))?;
            rt.block_on(bsannot::cmd_serve(&a))?;
        }
        Command::AdapterUniform => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            bsannot_core::classify::external::run_uniform_adapter(stdin, stdout)
                .map_err(|e| CliError::usage(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
