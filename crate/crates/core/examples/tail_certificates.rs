//! Empirical tail checks for the supported noise families under one
//! certificate. Laplace noise has exponential tails, not Gaussian-type ones,
//! and is rejected outright. The uniform law is admissible, but this `K` is
//! too small for its flat density near zero, which the report pinpoints.

use specfilter::montecarlo::{tail_report, TailCertificate, TAIL_GRID};
use specfilter::{NoiseFamily, NoiseSpec};

pub fn run_example() -> specfilter::Result<()> {
    for family in [
        NoiseFamily::Gaussian,
        NoiseFamily::UniformSymmetric,
        NoiseFamily::Laplace,
    ] {
        let cert = TailCertificate {
            k: (1.0f64 / 3.0).sqrt(),
            beta: 3.0,
            c: Some(0.15),
        };
        let spec = NoiseSpec::new(family, 1.0)?.with_certificate(cert);
        let report = tail_report(&spec, 50_000, 7, Some(1.0), &TAIL_GRID)?;
        println!(
            "{:<18} admissible {:<5} passed {}",
            family.name(),
            report.admissible,
            report.passed
        );
        if let Some(err) = report.first_violation() {
            println!("  {err}");
        }
    }
    Ok(())
}

fn main() -> specfilter::Result<()> {
    run_example()
}
