//! Eigenvalues observed with noise: the conditional oracle for one
//! realization of the eigenvalue noise, the gated threshold selector and
//! its conditional bound.

use specfilter::montecarlo::{
    check_theorem2, draw_context, estimate_risks, parse_estimators, McSettings, XiSource,
};
use specfilter::noisy_operator::{conditional_oracle, conditional_risk, m_set, TailCertificate2};
use specfilter::oracles::gaussian_tail_constant;
use specfilter::{NoiseFamily, NoiseSpec, ProblemInstance};

pub fn run_example() -> specfilter::Result<()> {
    let inst =
        ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1, 0.01], vec![1.0, 0.1, 2.0, 0.05], 0.2)?;
    let xi_spec = NoiseSpec::new(NoiseFamily::Gaussian, 0.05)?;
    let ctx = draw_context(&inst, &xi_spec, 1.0, 2, 0)?;
    println!("observed eigenvalues {:?}", ctx.spectrum().bhat());
    println!(
        "gated set M = {:?}",
        m_set(inst.system(), 1.0, 0.05).indices()
    );

    let oracle = conditional_oracle(&ctx);
    println!(
        "conditional oracle {:?}, risk {:.4}",
        oracle.indices(),
        conditional_risk(&oracle, &ctx)?.total
    );

    let mc = McSettings::gaussian(10_000, 2);
    let est = parse_estimators(&["noisy-threshold(3,1)", "threshold(3)"], inst.n())?;
    for r in estimate_risks(&inst, &est, XiSource::Fixed(&ctx), &mc)? {
        println!("{:<22} {:.4} +/- {:.4}", r.id, r.mean, r.stderr);
    }

    let cert = TailCertificate2::new(gaussian_tail_constant(3.0)?, 3.0, 0.15)?;
    let rep = check_theorem2(&ctx, 3.0, gaussian_tail_constant(3.0)?, &cert, &mc)?;
    println!("conditional bound: {:.4} <= {:.4}", rep.lhs, rep.rhs);
    Ok(())
}

fn main() -> specfilter::Result<()> {
    run_example()
}
