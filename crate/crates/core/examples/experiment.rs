//! Runs a JSON-configured experiment and writes its artifacts with a
//! manifest into a directory (default: a fresh temporary one).

use std::path::PathBuf;

use specfilter::io::{experiment_artifacts, load_experiment, write_outputs};
use specfilter::montecarlo::run_experiment;

pub fn run_example() -> specfilter::Result<()> {
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/r1_noisy.json");
    let (config, instance) = load_experiment(&config)?;
    let report = run_experiment(&config, &instance)?;
    let out = std::env::temp_dir().join(format!("specfilter-example-{}", std::process::id()));
    let manifest = write_outputs(&out, &experiment_artifacts(&report, true)?)?;
    for entry in &manifest.artifacts {
        println!(
            "{:<28} {:>7} bytes  {}",
            entry.path, entry.bytes, entry.sha256
        );
    }
    for b in &report.bounds {
        println!("{:<24} satisfied {}", b.name, b.holds_with_margin(3.0));
    }
    std::fs::remove_dir_all(&out).map_err(|source| specfilter::Error::Io {
        path: out.clone(),
        source,
    })?;
    Ok(())
}

fn main() -> specfilter::Result<()> {
    run_example()
}
