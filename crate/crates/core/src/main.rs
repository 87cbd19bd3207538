use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use funcdict::config::RunConfig;
use funcdict::experiment;
use funcdict::Result;

#[derive(Parser)]
#[command(name = "funcdict", version, about = "Learn consistent function dictionaries on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSONL.
    GenData(Common),
    /// Train a dictionary network and write an experiment bundle.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.k=12`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c) | Command::Train(c) | Command::Eval(c) => c,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if common.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match cli.command {
        Command::GenData(_) => {
            let summary = experiment::gen_data(&cfg)?;
            println!("wrote {}", cfg.paths.dataset.display());
            print!("{summary}");
        }
        Command::Train(_) => {
            let outcome = experiment::train(&cfg)?;
            if let Some(step) = outcome.resumed_from {
                println!("resumed from step {step}");
            }
            println!(
                "trained to step {} in {}",
                outcome.final_step,
                cfg.paths.output.display()
            );
        }
        Command::Eval(_) => {
            let report = experiment::eval(&cfg)?;
            print!("{}", experiment::describe(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
