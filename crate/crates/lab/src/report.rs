//! Check results, run reports, and their files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, Format};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// A status read against the run's expectations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    ExpectedFail,
    UnexpectedPass,
    Skipped,
}

impl Outcome {
    pub fn is_ok(self) -> bool {
        matches!(self, Outcome::Pass | Outcome::ExpectedFail | Outcome::Skipped)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::ExpectedFail => "expected-fail",
            Outcome::UnexpectedPass => "unexpected-pass",
            Outcome::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub id: String,
    pub status: Status,
    pub expected_fail: bool,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub values: BTreeMap<String, f64>,
}

impl Check {
    pub fn new(id: &str, pass: bool) -> Self {
        Check {
            id: id.to_string(),
            status: if pass { Status::Pass } else { Status::Fail },
            expected_fail: false,
            outcome: if pass { Outcome::Pass } else { Outcome::Fail },
            reason: None,
            values: BTreeMap::new(),
        }
    }

    pub fn skipped(id: &str, reason: impl Into<String>) -> Self {
        Check {
            status: Status::Skipped,
            outcome: Outcome::Skipped,
            reason: Some(reason.into()),
            ..Check::new(id, true)
        }
    }

    pub fn failed(id: &str, reason: impl Into<String>) -> Self {
        Check {
            reason: Some(reason.into()),
            ..Check::new(id, false)
        }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }

    pub fn reason(mut self, r: impl Into<String>) -> Self {
        self.reason = Some(r.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// Applies the `expect_fail` list.
    pub fn expect(mut self, expect_fail: &[String]) -> Self {
        self.expected_fail = expect_fail.iter().any(|e| e == &self.id);
        self.outcome = match (self.status, self.expected_fail) {
            (Status::Skipped, _) => Outcome::Skipped,
            (Status::Pass, false) => Outcome::Pass,
            (Status::Fail, false) => Outcome::Fail,
            (Status::Pass, true) => Outcome::UnexpectedPass,
            (Status::Fail, true) => Outcome::ExpectedFail,
        };
        self
    }
}

/// Rows written verbatim; every cell is preformatted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| e.into_error())
    }
}

/// Shortest round-trip form, scientific outside `[1e-5, 1e16)`; `inf`,
/// `-inf`, `nan` for non-finite values.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:?}")
    }
}

/// What one command produced.
#[derive(Clone, Debug, Default)]
pub struct Section {
    pub name: String,
    pub summary: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    pub csv: Option<CsvTable>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Section {
            name: name.to_string(),
            ..Section::default()
        }
    }

    pub fn put(&mut self, key: &str, v: impl Serialize) {
        self.summary.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub artifact_version: &'static str,
    pub command: String,
    pub config: ExperimentConfig,
    pub summaries: BTreeMap<String, BTreeMap<String, Value>>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig, sections: &[Section]) -> Self {
        let checks: Vec<Check> = sections
            .iter()
            .flat_map(|s| s.checks.iter().cloned())
            .map(|c| c.expect(&config.expect_fail))
            .collect();
        RunReport {
            artifact_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: config.clone(),
            summaries: sections.iter().map(|s| (s.name.clone(), s.summary.clone())).collect(),
            pass: checks.iter().all(|c| c.outcome.is_ok()),
            checks,
        }
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn matrix(&self) -> CsvTable {
        let mut t = CsvTable::new(&["check", "status", "expected_fail", "outcome"]);
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::Skipped => "skipped",
            };
            t.push(vec![c.id.clone(), status.to_string(), c.expected_fail.to_string(), c.outcome.as_str().to_string()]);
        }
        t
    }
}

/// Writes `report.json`, `<command>.csv` and `timings.json`.
pub fn write_outputs(dir: &Path, report: &RunReport, csv: Option<&CsvTable>, timings: &BTreeMap<String, f64>) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let formats = &report.config.output.formats;
    if formats.contains(&Format::Json) {
        let mut text = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(dir.join("report.json"), text)?;
    }
    if let (true, Some(t)) = (formats.contains(&Format::Csv), csv) {
        fs::write(dir.join(format!("{}.csv", report.command)), t.to_bytes()?)?;
    }
    let mut text = serde_json::to_string_pretty(timings).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(dir.join("timings.json"), text)
}
