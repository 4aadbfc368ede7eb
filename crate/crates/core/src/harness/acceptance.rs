//! Acceptance criteria and the experiments that decide them.

use std::collections::BTreeMap;
use std::path::Path;

use super::{run_experiment, ExperimentConfig, ExperimentId, HarnessError, Report, Verdict};

pub struct Criterion {
    pub number: u8,
    pub title: &'static str,
    pub experiment: ExperimentId,
}

pub const CRITERIA: [Criterion; 13] = [
    Criterion { number: 1, title: "pathwise continuity relation", experiment: ExperimentId::Continuity },
    Criterion { number: 2, title: "stationarity of the product geometric measure", experiment: ExperimentId::Stationarity },
    Criterion { number: 3, title: "mean current", experiment: ExperimentId::MeanCurrent },
    Criterion { number: 4, title: "predictable quadratic variation limit", experiment: ExperimentId::QvConvergence },
    Criterion { number: 5, title: "Gaussian initial field", experiment: ExperimentId::InitialField },
    Criterion { number: 6, title: "block conditional expectation", experiment: ExperimentId::BgTerms },
    Criterion { number: 7, title: "Boltzmann-Gibbs decay", experiment: ExperimentId::BgDecay },
    Criterion { number: 8, title: "boundary-current variance growth", experiment: ExperimentId::BoundaryVariance },
    Criterion { number: 9, title: "Hurst exponent 1/4", experiment: ExperimentId::Hurst },
    Criterion { number: 10, title: "current-field gap", experiment: ExperimentId::MollifierGap },
    Criterion { number: 11, title: "martingale residual", experiment: ExperimentId::MartingaleResidual },
    Criterion { number: 12, title: "stochastic heat equation self-tests", experiment: ExperimentId::SpdeSelftest },
    Criterion { number: 13, title: "border coefficient order", experiment: ExperimentId::MartingaleResidual },
];

pub fn criterion(k: u8) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.number == k)
}

/// Runs `experiment` with its default configuration under `out_root`.
pub fn run_default(experiment: ExperimentId, out_root: &Path) -> Result<Report, HarnessError> {
    let mut cfg = ExperimentConfig::defaults(experiment);
    cfg.out = out_root.to_path_buf();
    run_experiment(&cfg)
}

/// Verdict for criterion `k`; a criterion that produced several verdicts (one per `n`)
/// passes only if all of them do.
pub fn verdict_for(report: &Report, k: u8) -> Option<Verdict> {
    let mut hits = report.verdicts.iter().filter(|v| v.criterion == Some(k));
    let first = hits.next()?.clone();
    Some(hits.fold(first, |mut acc, v| {
        acc.passed &= v.passed;
        acc.detail = format!("{}; {}", acc.detail, v.detail);
        if let (Some(a), Some(b)) = (&mut acc.explanation, &v.explanation) {
            a.consistent &= b.consistent;
        }
        acc
    }))
}

pub fn evaluate_criterion(k: u8, out_root: &Path) -> Result<Verdict, HarnessError> {
    let c = criterion(k).unwrap_or_else(|| panic!("no acceptance criterion {k}"));
    let report = run_default(c.experiment, out_root)?;
    Ok(verdict_for(&report, k).unwrap_or_else(|| panic!("{} produced no verdict for criterion {k}", c.experiment)))
}

/// Runs every experiment once and returns one verdict per criterion, in order.
pub fn run_acceptance(out_root: &Path, mut progress: impl FnMut(&Verdict)) -> Result<Vec<Verdict>, HarnessError> {
    let mut reports: BTreeMap<&str, Report> = BTreeMap::new();
    let mut out = Vec::with_capacity(CRITERIA.len());
    for c in &CRITERIA {
        let name = c.experiment.name();
        if !reports.contains_key(name) {
            reports.insert(name, run_default(c.experiment, out_root)?);
        }
        let v = verdict_for(&reports[name], c.number)
            .unwrap_or_else(|| panic!("{name} produced no verdict for criterion {}", c.number));
        progress(&v);
        out.push(v);
    }
    Ok(out)
}
