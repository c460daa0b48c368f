//! Synthetic instance families.
//!
//! Spectra decay polynomially, `b_i = i^{-p}` with 1-based `i`. Coefficient
//! laws are chosen independently of the spectrum so that large
//! coefficients may sit at small eigenvalues.

use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::rng_for;
use crate::sequence_model::ProblemInstance;

/// Stream domain for generator randomness.
pub const GENERATOR_DOMAIN: u64 = 5 << 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpectrumLaw {
    /// `b_i = i^{-p}`.
    Polynomial { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientLaw {
    /// `x_i = amplitude i^{-q}`.
    Polynomial { q: f64, amplitude: f64 },
    /// The polynomial values in a seeded random order.
    Permutation { q: f64, amplitude: f64 },
    /// `background i^{-q}` everywhere, plus `amplitude` at the spike
    /// positions (0-based). Without explicit positions, `count` distinct
    /// positions are drawn from the seed.
    SparseSpikes {
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        positions: Option<Vec<usize>>,
        #[serde(default = "one")]
        count: usize,
        #[serde(default)]
        background: f64,
        #[serde(default = "one_f")]
        q: f64,
    },
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

/// Names accepted for spectrum families on the command line.
impl FromStr for SpectrumLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polynomial" => Ok(Self::Polynomial { p: 1.0 }),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// Complete recipe for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    pub sigma: f64,
    pub spectrum: SpectrumLaw,
    pub coefficients: CoefficientLaw,
    pub seed: u64,
}

pub fn spectrum(law: &SpectrumLaw, n: usize) -> Result<Vec<f64>> {
    match *law {
        SpectrumLaw::Polynomial { p } => {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "spectrum exponent must be finite and non-negative, got {p}"
                )));
            }
            Ok((1..=n).map(|i| (i as f64).powf(-p)).collect())
        }
    }
}

fn polynomial(n: usize, q: f64, amplitude: f64) -> Vec<f64> {
    (1..=n).map(|i| amplitude * (i as f64).powf(-q)).collect()
}

pub fn coefficients(law: &CoefficientLaw, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng_for(seed, GENERATOR_DOMAIN);
    match law {
        CoefficientLaw::Polynomial { q, amplitude } => Ok(polynomial(n, *q, *amplitude)),
        CoefficientLaw::Permutation { q, amplitude } => {
            let mut x = polynomial(n, *q, *amplitude);
            x.shuffle(&mut rng);
            Ok(x)
        }
        CoefficientLaw::SparseSpikes {
            amplitude,
            positions,
            count,
            background,
            q,
        } => {
            let mut x = polynomial(n, *q, *background);
            let spots = match positions {
                Some(p) => {
                    if let Some(bad) = p.iter().find(|i| **i >= n) {
                        return Err(Error::InvalidParameter(format!(
                            "spike position {bad} outside 0..{n}"
                        )));
                    }
                    p.clone()
                }
                None => {
                    if *count > n {
                        return Err(Error::InvalidParameter(format!(
                            "{count} spikes requested for n = {n}"
                        )));
                    }
                    let mut v = index::sample(&mut rng, n, *count).into_vec();
                    v.sort_unstable();
                    v
                }
            };
            for i in spots {
                x[i] = *amplitude;
            }
            Ok(x)
        }
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    if spec.n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let b = spectrum(&spec.spectrum, spec.n)?;
    let x = coefficients(&spec.coefficients, spec.n, spec.seed)?;
    ProblemInstance::from_spectrum(b, x, spec.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::oracle_model;

    #[test]
    fn polynomial_spectrum() {
        let b = spectrum(&SpectrumLaw::Polynomial { p: 1.0 }, 8).unwrap();
        let want: Vec<f64> = (1..=8).map(|i| 1.0 / i as f64).collect();
        assert_eq!(b, want);
        assert!(spectrum(&SpectrumLaw::Polynomial { p: -1.0 }, 3).is_err());
    }

    #[test]
    fn permutation_keeps_values() {
        let law = CoefficientLaw::Permutation {
            q: 1.0,
            amplitude: 2.0,
        };
        let mut x = coefficients(&law, 20, 3).unwrap();
        assert_eq!(x, coefficients(&law, 20, 3).unwrap());
        x.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(x, polynomial(20, 1.0, 2.0));
    }

    #[test]
    fn spike_at_small_eigenvalue_is_non_monotone() {
        let spec = GeneratorSpec {
            n: 8,
            sigma: 0.2,
            spectrum: SpectrumLaw::Polynomial { p: 2.0 },
            coefficients: CoefficientLaw::SparseSpikes {
                amplitude: 50.0,
                positions: Some(vec![6]),
                count: 1,
                background: 1.0,
                q: 2.0,
            },
            seed: 0,
        };
        let m = oracle_model(&generate(&spec).unwrap());
        assert!(m.contains(6));
        assert!(!m.is_prefix());
    }

    #[test]
    fn random_spikes_are_distinct_and_seeded() {
        let law = CoefficientLaw::SparseSpikes {
            amplitude: 5.0,
            positions: None,
            count: 3,
            background: 0.0,
            q: 1.0,
        };
        let x = coefficients(&law, 10, 9).unwrap();
        assert_eq!(x.iter().filter(|v| **v == 5.0).count(), 3);
        assert_eq!(x, coefficients(&law, 10, 9).unwrap());
        assert!(coefficients(
            &CoefficientLaw::SparseSpikes {
                amplitude: 1.0,
                positions: Some(vec![10]),
                count: 1,
                background: 0.0,
                q: 1.0
            },
            10,
            0
        )
        .is_err());
    }

    #[test]
    fn unknown_family_name() {
        assert!(matches!(
            "exponential".parse::<SpectrumLaw>(),
            Err(Error::UnknownFamily(_))
        ));
    }
}
