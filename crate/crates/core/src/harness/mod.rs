//! Experiment orchestration: configuration, raw output, summaries and verdicts.
//!
//! Every run writes into `<out>/<experiment>/`:
//! `manifest.json` first, raw CSV tables while replicas finish, and `summary.json` last.

pub mod acceptance;
pub mod config;
mod experiments;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{parse_config, ConfigError, ExperimentConfig, ExperimentId, FnSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{experiment}: {message}")]
    Experiment { experiment: ExperimentId, message: String },
}

/// Secondary check attached to a failing verdict when the failure has a quantitative explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub note: String,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Acceptance criterion number, or `None` for supplementary checks.
    pub criterion: Option<u8>,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub explanation: Option<Explanation>,
}

impl Verdict {
    pub fn new(criterion: Option<u8>, name: &str, passed: bool, detail: String) -> Self {
        Self {
            criterion,
            name: name.to_string(),
            passed,
            detail,
            explanation: None,
        }
    }

    pub fn explained(mut self, note: String, consistent: bool) -> Self {
        self.explanation = Some(Explanation { note, consistent });
        self
    }

    pub fn line(&self) -> String {
        let tag = match self.criterion {
            Some(k) => format!("C{k:02}"),
            None => "   ".to_string(),
        };
        format!(
            "{} {tag} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub experiment: ExperimentId,
    pub dir: PathBuf,
    pub verdicts: Vec<Verdict>,
    pub summary: serde_json::Value,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn criterion(&self, k: u8) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.criterion == Some(k))
    }
}

/// Output directory of one run.
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(root: &Path, experiment: ExperimentId) -> Result<Self, HarnessError> {
        let path = root.join(experiment.name());
        fs::create_dir_all(&path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn file(&self, name: &str) -> Result<File, HarnessError> {
        let p = self.path.join(name);
        File::create(&p).map_err(|source| HarnessError::Io { path: p, source })
    }

    /// CSV writer with the given header already written.
    pub fn csv(&self, name: &str, header: &[&str]) -> Result<Table, HarnessError> {
        let mut w = csv::Writer::from_writer(self.file(name)?);
        w.write_record(header)?;
        w.flush().map_err(|source| HarnessError::Io {
            path: self.path.join(name),
            source,
        })?;
        Ok(Table { w })
    }

    pub fn jsonl(&self, name: &str) -> Result<JsonLines, HarnessError> {
        Ok(JsonLines {
            w: BufWriter::new(self.file(name)?),
            path: self.path.join(name),
        })
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), HarnessError> {
        let p = self.path.join(name);
        let mut f = BufWriter::new(self.file(name)?);
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")
            .and_then(|_| f.flush())
            .map_err(|source| HarnessError::Io { path: p, source })
    }
}

/// Append-only CSV table; every row is flushed.
pub struct Table {
    w: csv::Writer<File>,
}

impl Table {
    pub fn row<I, T>(&mut self, fields: I) -> Result<(), HarnessError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.w.write_record(fields)?;
        self.w.flush().map_err(|e| HarnessError::Csv(e.into()))
    }
}

pub struct JsonLines {
    w: BufWriter<File>,
    path: PathBuf,
}

impl JsonLines {
    pub fn line<T: Serialize>(&mut self, value: &T) -> Result<(), HarnessError> {
        serde_json::to_writer(&mut self.w, value)?;
        self.w
            .write_all(b"\n")
            .and_then(|_| self.w.flush())
            .map_err(|source| HarnessError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: ExperimentId,
    crate_version: &'static str,
    seed_derivation: &'static str,
    master_seed: u64,
    parallelism: usize,
    config: &'a ExperimentConfig,
    canonical_config: String,
}

/// Runs one experiment and writes its manifest, raw tables and summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let dir = RunDir::create(&cfg.out, cfg.experiment)?;
    dir.json(
        "manifest.json",
        &Manifest {
            experiment: cfg.experiment,
            crate_version: env!("CARGO_PKG_VERSION"),
            seed_derivation: "splitmix64 finalizer, two rounds, over master and golden-ratio multiple of index + 1",
            master_seed: cfg.seed,
            parallelism: crate::replica::parallelism(),
            config: cfg,
            canonical_config: cfg.to_canonical(),
        },
    )?;
    let (verdicts, summary) = experiments::dispatch(cfg, &dir)?;
    let report = Report {
        experiment: cfg.experiment,
        dir: dir.path().to_path_buf(),
        verdicts,
        summary,
    };
    dir.json("summary.json", &report)?;
    Ok(report)
}
