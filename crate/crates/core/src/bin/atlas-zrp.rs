use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use atlas_zrp::harness::acceptance::run_acceptance;
use atlas_zrp::harness::config::{experiment_in, OUT_ENV};
use atlas_zrp::harness::{parse_config, run_experiment, ExperimentConfig, ExperimentId};

#[derive(Parser)]
#[command(name = "atlas-zrp", version, about = "Weakly asymmetric Atlas zero-range process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its tables under <out>/<experiment>/.
    Run {
        experiment: ExperimentId,
        /// Key-value config file; flags override its entries.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated n-grid.
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
        /// Extra `key=value` overrides, e.g. `--set tol.sigmas=4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run every acceptance experiment with its defaults; exit 0 only if all criteria pass.
    Verify {
        #[arg(long, env = OUT_ENV, default_value = "results")]
        out: PathBuf,
    },
    /// Print the default configuration of an experiment.
    Defaults { experiment: ExperimentId },
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            experiment,
            config,
            n,
            replicas,
            seed,
            out,
            set,
        } => {
            let text = match &config {
                Some(p) => Some(std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?),
                None => None,
            };
            let name = config.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            if let Some(t) = &text {
                if let Some(id) = experiment_in(t, &name)? {
                    if id != experiment {
                        return Err(format!("{name} configures `{id}`, not `{experiment}`").into());
                    }
                }
            }
            let mut overrides: Vec<(String, String)> = Vec::new();
            if let Some(n) = n {
                overrides.push(("n".into(), n));
            }
            if let Some(r) = replicas {
                overrides.push(("replicas".into(), r.to_string()));
            }
            if let Some(s) = seed {
                overrides.push(("seed".into(), s.to_string()));
            }
            if let Some(o) = out {
                overrides.push(("out".into(), o.display().to_string()));
            }
            for kv in set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
                overrides.push((k.trim().to_string(), v.trim().to_string()));
            }
            let cfg = parse_config(experiment, text.as_deref().map(|t| (name.as_str(), t)), &overrides)?;
            let report = run_experiment(&cfg)?;
            for v in &report.verdicts {
                println!("{}", v.line());
            }
            println!("tables written to {}", report.dir.display());
            Ok(report.passed())
        }
        Command::Verify { out } => {
            let verdicts = run_acceptance(&out, |v| println!("{}", v.line()))?;
            let failed = verdicts.iter().filter(|v| !v.passed).count();
            println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
            Ok(failed == 0)
        }
        Command::Defaults { experiment } => {
            print!("{}", ExperimentConfig::defaults(experiment).to_canonical());
            Ok(true)
        }
    }
}
