//! A large coefficient behind a small eigenvalue: the threshold selector
//! keeps it without paying for the noisy coordinates in between, which no
//! spectral cut-off can do.

use specfilter::montecarlo::{
    estimate_risks, parse_estimators, CutoffComparison, McSettings, XiSource,
};
use specfilter::ProblemInstance;

pub fn run_example() -> specfilter::Result<()> {
    let inst =
        ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1, 0.05], vec![1.0, 0.1, 0.05, 40.0], 0.2)?;
    let estimators = parse_estimators(&["cutoff(all)", "ure", "threshold(3)"], inst.n())?;
    let risks = estimate_risks(
        &inst,
        &estimators,
        XiSource::None,
        &McSettings::gaussian(10_000, 8),
    )?;
    for r in &risks {
        println!("{:<14} {:>12.4} +/- {:.4}", r.id, r.mean, r.stderr);
    }
    let threshold = risks
        .iter()
        .find(|r| r.id == "threshold(3)")
        .expect("requested");
    let cmp = CutoffComparison::from_estimates(&risks, threshold).expect("cut-offs requested");
    println!(
        "threshold beats {} by {:.3} ({:.1} combined standard errors)",
        cmp.best_cutoff.id,
        cmp.difference,
        cmp.difference / cmp.combined_stderr
    );
    Ok(())
}

fn main() -> specfilter::Result<()> {
    run_example()
}
