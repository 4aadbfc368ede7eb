//! Drives a harness experiment from code with overrides, the same way the CLI does.
//!
//! `cargo run --release --example run_experiment -- [experiment] [out]`

use atlas_zrp::harness::{parse_config, run_experiment, ExperimentId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let id: ExperimentId = args.next().as_deref().unwrap_or("bg-decay").parse()?;
    let out = args.next().unwrap_or_else(|| "results".into());

    let overrides = vec![("replicas".to_string(), "64".to_string()), ("out".to_string(), out)];
    let cfg = parse_config(id, None, &overrides)?;
    print!("{}", cfg.to_canonical());
    let report = run_experiment(&cfg)?;
    for v in &report.verdicts {
        println!("{}", v.line());
    }
    println!("wrote {}", report.dir.display());
    Ok(())
}
