//! Reduces a small operator to its singular system and shows that the
//! sequence-space view recovers a signal from noiseless data.

use nalgebra::DMatrix;
use specfilter::sequence_model::{build_singular_system, noise_variances, synthesize, to_sequence};

pub fn run_example() -> specfilter::Result<()> {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(3, 4, &[
        1.0, 0.5, 0.25, 0.125,
        0.0, 0.5, 0.25, 0.125,
        0.0, 0.0, 0.05, 0.025,
    ]);
    let system = build_singular_system(&a, 1e-12)?;
    println!("b = {:?}", system.spectrum());
    println!(
        "sigma_i^2 at sigma = 0.1: {:?}",
        noise_variances(&system, 0.1)?
    );

    let coeffs = [2.0, 0.3, 1.5];
    let x0 = synthesize(&coeffs, &system)?;
    let y = &a * nalgebra::DVector::from_column_slice(&x0);
    let obs = to_sequence(y.as_slice(), &system, 0.1)?;
    let back = synthesize(obs.ydag(), &system)?;
    let err = x0
        .iter()
        .zip(&back)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    println!(
        "recovered coefficients {:?}, max source error {err:.1e}",
        obs.ydag()
    );
    assert!(err < 1e-10);
    Ok(())
}

fn main() -> specfilter::Result<()> {
    run_example()
}
