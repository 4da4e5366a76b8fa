//! Runs every criterion on the d = 1 defaults and prints one line per criterion.
//!
//! Criterion 6 (uniform sup constant) is expected to fail: the measured constant grows with
//! lambda on the default kernel. It is reported as FAIL and does not abort the run; any other
//! failing criterion does.

use std::path::Path;
use std::process::ExitCode;

use nonlocal_cauchy::config::ExperimentConfig;
use nonlocal_cauchy::verify;

const KNOWN_FAILURES: [u32; 1] = [6];

fn main() -> ExitCode {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = match ExperimentConfig::load(&path, &[]) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cannot load {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    };
    let report = match verify::run(&cfg, &[]) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("verify failed to run: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut unexpected = Vec::new();
    for c in &report.criteria {
        println!("{}", c.line());
        if !c.passed && !KNOWN_FAILURES.contains(&c.id) {
            unexpected.push(c.id);
        }
    }
    let passed = report.criteria.iter().filter(|c| c.passed).count();
    println!("{passed}/{} criteria pass", report.criteria.len());
    if report.criteria.len() != verify::CRITERIA.len() {
        eprintln!("expected {} criteria, got {}", verify::CRITERIA.len(), report.criteria.len());
        return ExitCode::FAILURE;
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
