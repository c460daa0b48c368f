// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod filters;
pub mod instances;
pub mod io;
pub mod montecarlo;
pub mod noisy_operator;
pub mod oracles;
pub mod sequence_model;

pub use error::{Error, Result};
pub use filters::{FilterVector, ModelSet};
pub use montecarlo::{Estimator, ExperimentConfig, NoiseFamily, NoiseSpec, RiskEstimate};
pub use noisy_operator::{ConditionalContext, NoisySpectrum};
pub use oracles::{BoundReport, RiskDecomposition};
pub use sequence_model::{ProblemInstance, SequenceObservation, SingularSystem};
