//! Acceptance gate: each criterion is re-evaluated from the run reports
//! against its own thresholds and oracles, and printed as one line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use cocycle_lab::config::ExperimentConfig;
use cocycle_lab::experiment::Experiment;
use cocycle_lab::report::RunReport;
use cocycle_lab::run_command;
use serde_json::{json, Value};

struct Run {
    report: RunReport,
    timings: BTreeMap<String, f64>,
}

impl Run {
    fn value(&self, check: &str, key: &str) -> f64 {
        self.report
            .check(check)
            .and_then(|c| c.get(key))
            .unwrap_or(f64::NAN)
    }

    fn passed(&self, check: &str) -> bool {
        self.report.check(check).is_some_and(|c| c.passed())
    }

    fn summary(&self, section: &str, key: &str) -> &Value {
        self.report
            .summaries
            .get(section)
            .and_then(|s| s.get(key))
            .unwrap_or(&Value::Null)
    }
}

fn shipped(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"));
    ExperimentConfig::load(&path).expect("shipped config loads")
}

/// Everything runs on one worker thread.
fn run(command: &str, config: ExperimentConfig) -> Run {
    let exp = Experiment::new(config).expect("valid experiment");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (report, _, timings) = pool.install(|| run_command(command, &exp));
    Run { report, timings }
}

struct Gate {
    lines: Vec<(String, bool, String)>,
}

impl Gate {
    fn record(&mut self, id: &str, title: &str, results: Vec<(bool, String)>) {
        let ok = results.iter().all(|r| r.0);
        let detail: Vec<String> = results
            .into_iter()
            .map(|(pass, d)| if pass { d } else { format!("FAIL {d}") })
            .collect();
        let line = format!("{id} {title}");
        println!("{:<44} {}  [{}]", line, if ok { "PASS" } else { "FAIL" }, detail.join("; "));
        self.lines.push((id.to_string(), ok, detail.join("; ")));
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

/// |Fix(f^n)| for the cat map is the Lucas number L_{2n} minus 2.
fn cat_map_counts(n_max: u64) -> Vec<(u64, u64)> {
    let mut lucas = vec![2u64, 1];
    while lucas.len() <= 2 * n_max as usize {
        let k = lucas.len();
        lucas.push(lucas[k - 1] + lucas[k - 2]);
    }
    (1..=n_max).map(|n| (n, lucas[2 * n as usize] - 2)).collect()
}

fn counts(run: &Run) -> Vec<(u64, u64)> {
    serde_json::from_value(run.summary("obstructions", "counts").clone()).unwrap_or_default()
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let default = run("verify", shipped("default"));
    let control = run("verify", shipped("negative_control"));
    let half = run("verify", shipped("alpha_half"));
    let shift = run("verify", shipped("shift"));
    let derivative = run(
        "spectrum",
        serde_json::from_value(json!({ "seed": 1, "system": "cat_map", "cocycle": "derivative" })).unwrap(),
    );
    let rotation = run(
        "holonomy",
        serde_json::from_value(json!({
            "seed": 2,
            "system": "cat_map",
            "cocycle": { "torus_rotation": { "frequency": [1, 2], "phase": 0.3 } }
        }))
        .unwrap(),
    );
    println!("suite runs finished in {:.1} s", t0.elapsed().as_secs_f64());

    let golden = (3.0 + 5f64.sqrt()) / 2.0;
    let mut gate = Gate { lines: Vec::new() };

    let residual = default.value("transfer.uniqueness", "residual");
    let n_points = default.summary("transfer", "n_points").as_u64().unwrap_or(0);
    let secs = default.timings.get("build_transfer").copied().unwrap_or(f64::INFINITY);
    gate.record(
        "AC1",
        "coboundary round trip",
        vec![
            (n_points == 10_000, format!("entries {n_points}")),
            (residual <= 1e-6, format!("residual {residual:.2e}")),
            (secs <= 60.0, format!("build {secs:.1} s on one thread")),
        ],
    );

    let fixed = control.value("obstructions.defect", "fixed_point_defect");
    gate.record(
        "AC2",
        "obstruction soundness",
        vec![
            (counts(&default) == cat_map_counts(10), "cat map counts n <= 10".to_string()),
            (
                default.value("obstructions.defect", "max_defect") <= 1e-8,
                format!("cat map max defect {:.2e}", default.value("obstructions.defect", "max_defect")),
            ),
            (
                counts(&shift) == (1..=8).map(|n| (n, 1u64 << n)).collect::<Vec<_>>(),
                "2-shift counts n <= 8".to_string(),
            ),
            (
                shift.value("obstructions.defect", "max_defect") <= 1e-8,
                format!("shift max defect {:.2e}", shift.value("obstructions.defect", "max_defect")),
            ),
            ((fixed - 1.0).abs() <= 1e-12, format!("control fixed point {fixed}")),
        ],
    );

    let mut ac3 = Vec::new();
    for (name, r) in [("default", &default), ("alpha_half", &half), ("shift", &shift)] {
        let m = r.value("spectrum.zero_exponents", "max_abs");
        let iters = r.summary("spectrum", "iterations").as_u64().unwrap_or(0);
        ac3.push((m <= 1e-3 && iters >= 100_000, format!("{name} max|λ| {m:.1e}")));
    }
    let exps: Vec<Vec<f64>> = serde_json::from_value(derivative.summary("spectrum", "exponents").clone()).unwrap_or_default();
    let err = exps
        .iter()
        .map(|e| (e[0] - golden.ln()).abs().max((e[e.len() - 1] + golden.ln()).abs()))
        .fold(if exps.is_empty() { f64::INFINITY } else { 0.0 }, f64::max);
    ac3.push((err <= 1e-3, format!("derivative error {err:.1e}")));
    gate.record("AC3", "zero exponents", ac3);

    let slope = default.value("near_returns.slope", "adjusted_slope");
    let spread = default.value("near_returns.envelope", "spread");
    let control_slope = control.value("near_returns.slope", "adjusted_slope");
    let scan = default.summary("transfer", "scan_points").as_u64().unwrap_or(0);
    gate.record(
        "AC4",
        "near-return scaling",
        vec![
            (scan == 100_000, format!("table {scan}")),
            (within(slope, 0.85, 1.15), format!("slope {slope:.3}")),
            (spread <= 10.0, format!("envelope spread {spread:.2}")),
            (control_slope <= 0.2, format!("control slope {control_slope:.3}")),
        ],
    );

    let rate = default.value("closing.shadows", "min_fitted_rate");
    let shift_rate = shift.value("closing.shadows", "min_fitted_rate");
    gate.record(
        "AC5",
        "closing lemma",
        vec![
            (default.passed("closing.shadows"), format!("cat map {} shadows", default.value("closing.shadows", "shadows"))),
            (rate >= 0.9 * golden.ln(), format!("fitted rate {rate:.3}")),
            (
                shift.passed("closing.shadows") && shift_rate >= 2f64.ln(),
                format!("shift rate {shift_rate:.3}"),
            ),
        ],
    );

    let norm = default.value("lyapnorm.closed_form", "norm");
    let want = (2.0 / 0.1f64.tanh()).sqrt();
    let rel = (norm - want).abs() / want;
    let certified = default.value("lyapnorm.sandwich", "certified");
    gate.record(
        "AC6",
        "Lyapunov norm",
        vec![
            (rel <= 1e-9, format!("closed form rel {rel:.1e}")),
            (
                default.passed("lyapnorm.sandwich") && certified >= 1000.0,
                format!("sandwich {certified} samples"),
            ),
            (default.passed("lyapnorm.growth"), "growth".to_string()),
        ],
    );

    let exact = shift.value("holonomy.exactness", "max_error");
    let mut ac7 = vec![(shift.passed("holonomy.exactness") && exact <= 1e-12, format!("exactness {exact:.1e}"))];
    for (name, r) in [("default", &default), ("shift", &shift), ("rotation", &rotation)] {
        let eq = r.value("holonomy.equivariance", "max_error");
        let gr = r.value("holonomy.groupoid", "max_error");
        ac7.push((eq <= 1e-8 && gr <= 1e-8, format!("{name} laws {eq:.1e}/{gr:.1e}")));
    }
    for (name, r) in [("default", &default), ("rotation", &rotation)] {
        let outliers = r.value("holonomy.envelope", "outliers");
        ac7.push((
            r.passed("holonomy.envelope") && outliers == 0.0,
            format!("{name} L {:.2} outliers {outliers}", r.value("holonomy.envelope", "L")),
        ));
    }
    gate.record("AC7", "holonomy", ac7);

    let s1 = default.value("regularity.slope", "slope");
    let s_half = half.value("regularity.slope", "slope");
    let frac = default.value("regularity.block_fraction", "fraction");
    let mut ac8 = vec![
        (within(s1, 0.85, 1.15), format!("α=1 slope {s1:.3}")),
        (within(s_half, 0.4, 0.65), format!("α=1/2 slope {s_half:.3}")),
        (frac >= 0.8, format!("block {frac:.3}")),
    ];
    for (name, r) in [("default", &default), ("alpha_half", &half)] {
        let ratio = r.value("regularity.chain", "max_length_ratio");
        let k = r.value("regularity.chain", "K");
        ac8.push((
            r.passed("regularity.chain") && ratio <= k * (1.0 + 1e-9),
            format!("{name} chains {} Σ/d {ratio:.3} <= K {k:.3}", r.value("regularity.chain", "chains")),
        ));
    }
    gate.record("AC8", "Hölder regularity", ac8);

    let all_default = default.report.pass;
    println!("default verify: {}", if all_default { "all checks pass" } else { "FAIL" });
    let failed: Vec<&str> = gate.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    println!("acceptance: {}/{} criteria pass", gate.lines.len() - failed.len(), gate.lines.len());
    if failed.is_empty() && all_default {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
