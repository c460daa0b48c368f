//! Exact oracle risks: the best projection, the best filter and their
//! factor-two relation, checked against exhaustive search.

use specfilter::filters::spectral_cutoff;
use specfilter::oracles::{
    brute_force_oracle_model, exact_filter_risk, exact_model_risk, factor_two_check, oracle_filter,
    oracle_model,
};
use specfilter::ProblemInstance;

pub fn run_example() -> specfilter::Result<()> {
    let inst =
        ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1, 0.01], vec![1.0, 0.1, 2.0, 0.05], 0.2)?;
    let m = oracle_model(&inst);
    assert_eq!(m, brute_force_oracle_model(&inst)?);
    let risk = exact_model_risk(&m, &inst)?;
    println!(
        "oracle model {:?}: bias {:.4}, variance {:.4}",
        m.indices(),
        risk.bias,
        risk.variance
    );
    println!(
        "oracle filter risk {:.4}",
        exact_filter_risk(&oracle_filter(&inst), &inst)?
    );
    for k in 0..=inst.n() {
        println!(
            "cut-off {k}: {:.4}",
            exact_filter_risk(&spectral_cutoff(k, inst.n())?, &inst)?
        );
    }
    let f2 = factor_two_check(&inst);
    println!("factor two: {:.4} <= {:.4}", f2.lhs, f2.rhs);
    Ok(())
}

fn main() -> specfilter::Result<()> {
    run_example()
}
