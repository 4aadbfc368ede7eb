//! Runs every acceptance criterion at its stated tolerance and prints one line per criterion.
//!
//! A criterion counts as met when its verdict passes, or when it fails on a documented
//! normalization deviation whose quantitative explanation is itself confirmed.
//! Restrict the run with `ACCEPTANCE_CRITERIA=1,5,13`.

use std::process::ExitCode;

use atlas_zrp::harness::acceptance::{verdict_for, run_default, CRITERIA};
use atlas_zrp::harness::Verdict;

fn selected() -> Option<Vec<u8>> {
    let raw = std::env::var("ACCEPTANCE_CRITERIA").ok()?;
    Some(raw.split(',').filter_map(|k| k.trim().parse().ok()).collect())
}

fn accepted(v: &Verdict) -> bool {
    v.passed || v.explanation.as_ref().is_some_and(|e| e.consistent)
}

fn main() -> ExitCode {
    let only = selected();
    let out = tempfile::tempdir().expect("temporary output directory");
    let mut reports = std::collections::BTreeMap::new();
    let mut failures = Vec::new();
    for c in CRITERIA.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.number))) {
        let name = c.experiment.name();
        if !reports.contains_key(name) {
            match run_default(c.experiment, out.path()) {
                Ok(r) => {
                    reports.insert(name, r);
                }
                Err(e) => {
                    println!("FAIL C{:02} {}: {e}", c.number, c.title);
                    failures.push(c.number);
                    continue;
                }
            }
        }
        let v = verdict_for(&reports[name], c.number).expect("every criterion has a verdict");
        println!("{}", v.line());
        if let Some(e) = &v.explanation {
            if !v.passed {
                println!(
                    "     C{:02} explanation ({}): {}",
                    c.number,
                    if e.consistent { "confirmed" } else { "NOT confirmed" },
                    e.note
                );
            }
        }
        if !accepted(&v) {
            failures.push(c.number);
        }
    }
    if failures.is_empty() {
        println!("acceptance: all selected criteria met");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unmet criteria {failures:?}");
        ExitCode::FAILURE
    }
}
