use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use cocycle_lab::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Spectrum,
    Obstructions,
    Transfer,
    Holonomy,
    Regularity,
    Verify,
}

/// Numerical checks for matrix cocycles over hyperbolic systems.
#[derive(Parser, Debug)]
#[command(name = "cocycle-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&config.output.directory));
    let name = cli.command.to_possible_value().expect("named").get_name().to_string();
    match cocycle_lab::run_to_dir(&name, config, &out, cli.threads) {
        Ok(report) => {
            for c in &report.checks {
                match &c.reason {
                    Some(r) => println!("{:<28} {:<16} {r}", c.id, c.outcome.as_str()),
                    None => println!("{:<28} {}", c.id, c.outcome.as_str()),
                }
            }
            println!("{}", if report.pass { "ok" } else { "FAILED" });
            ExitCode::from(if report.pass { 0 } else { 1 })
        }
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
