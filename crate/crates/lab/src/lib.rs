//! Experiment runner for the cocycle core: configs, suites and reports.

pub mod config;
pub mod experiment;
pub mod report;
pub mod suite;

use std::collections::BTreeMap;
use std::path::Path;

use config::ExperimentConfig;
use experiment::Experiment;
use report::{CsvTable, RunReport, Section};
use suite::Workbench;

pub const COMMANDS: [&str; 6] = ["spectrum", "obstructions", "transfer", "holonomy", "regularity", "verify"];

/// Runs one command and returns its report, its CSV table and the timings.
pub fn run_command(command: &str, exp: &Experiment) -> (RunReport, Option<CsvTable>, BTreeMap<String, f64>) {
    let wb = Workbench::new(exp);
    let sections: Vec<Section> = match command {
        "spectrum" => vec![wb.spectrum()],
        "obstructions" => vec![wb.obstructions()],
        "transfer" => vec![wb.transfer(), wb.lyapnorm()],
        "holonomy" => vec![wb.holonomy()],
        "regularity" => vec![wb.regularity()],
        "verify" => vec![wb.spectrum(), wb.obstructions(), wb.lyapnorm(), wb.transfer(), wb.holonomy(), wb.regularity()],
        other => panic!("unknown command {other}"),
    };
    let report = RunReport::new(command, &exp.config, &sections);
    let csv = if command == "verify" {
        Some(report.matrix())
    } else {
        sections.into_iter().find_map(|s| s.csv)
    };
    (report, csv, wb.timings())
}

/// Loads, runs and writes; the error carries the exit code.
pub fn run_to_dir(command: &str, config: ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<RunReport, (i32, String)> {
    let exp = Experiment::new(config).map_err(|e| (2, e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| (2, e.to_string()))?;
    let (report, csv, timings) = pool.install(|| run_command(command, &exp));
    report::write_outputs(out, &report, csv.as_ref(), &timings).map_err(|e| (2, format!("{}: {e}", out.display())))?;
    Ok(report)
}
