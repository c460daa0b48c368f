//! Singular system representation of the discrete operator and the
//! reduction of `y = A x0 + eps` to the heteroscedastic sequence model
//! `ydag_i = x_i + eta_i` with `Var(eta_i) = sigma^2 b_i^-2 / n`.
//!
//! The image space `R^n` carries the scaled inner product
//! `<u, v>_n = n^-1 sum u_i v_i`; the source side uses the plain Euclidean
//! product on `R^d`. All normalization by `n` happens here.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Relative tolerance applied to every orthonormality check.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Default relative rank tolerance for [`build_singular_system`].
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Bases {
    /// `phi_i = e_i` in `R^n`, `psi_i = sqrt(n) e_i`.
    Identity,
    /// Columns are the basis vectors: `phi` is `d x n`, `psi` is `n x n`.
    Explicit {
        phi: DMatrix<f64>,
        psi: DMatrix<f64>,
    },
}

/// Singular system `{b_i; phi_i, psi_i}` with `A phi_i = b_i psi_i`.
///
/// Either built from a dense operator by SVD, or specified directly by its
/// spectrum with implicit identity bases, which is exact for everything
/// that depends only on `(b, x, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSystem {
    b: Vec<f64>,
    bases: Bases,
}

impl SingularSystem {
    /// Spectrum-only system with implicit identity bases (`d = n`).
    pub fn from_spectrum(b: Vec<f64>) -> Result<Self> {
        validate_spectrum(&b)?;
        Ok(Self {
            b,
            bases: Bases::Identity,
        })
    }

    /// System with explicit bases, given as columns of `phi` (`d x n`) and
    /// `psi` (`n x n`). Orthonormality is checked, not assumed.
    pub fn from_bases(b: Vec<f64>, phi: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self> {
        validate_spectrum(&b)?;
        let n = b.len();
        check_len("phi column count", n, phi.ncols())?;
        check_len("psi column count", n, psi.ncols())?;
        check_len("psi row count", n, psi.nrows())?;
        if phi.nrows() < n {
            return Err(Error::DimensionMismatch {
                what: "phi ambient dimension (d >= n)",
                expected: n,
                found: phi.nrows(),
            });
        }
        check_orthonormal("phi", &phi, 1.0)?;
        check_orthonormal("psi", &psi, 1.0 / n as f64)?;
        Ok(Self {
            b,
            bases: Bases::Explicit { phi, psi },
        })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// Ambient dimension of the source space.
    pub fn d(&self) -> usize {
        match &self.bases {
            Bases::Identity => self.n(),
            Bases::Explicit { phi, .. } => phi.nrows(),
        }
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.b
    }

    pub fn has_explicit_bases(&self) -> bool {
        matches!(self.bases, Bases::Explicit { .. })
    }

    /// Source-space basis vector `phi_i` (0-based).
    pub fn phi(&self, i: usize) -> Vec<f64> {
        match &self.bases {
            Bases::Identity => unit(self.n(), i, 1.0),
            Bases::Explicit { phi, .. } => phi.column(i).iter().copied().collect(),
        }
    }

    /// Image-space basis vector `psi_i` (0-based), unit under `<.,.>_n`.
    pub fn psi(&self, i: usize) -> Vec<f64> {
        match &self.bases {
            Bases::Identity => unit(self.n(), i, (self.n() as f64).sqrt()),
            Bases::Explicit { psi, .. } => psi.column(i).iter().copied().collect(),
        }
    }

    /// Coefficients `<v, psi_i>_n` of an image-space vector.
    pub fn image_coefficients(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len("image vector", n, v.len())?;
        Ok(match &self.bases {
            Bases::Identity => {
                let scale = 1.0 / (n as f64).sqrt();
                v.iter().map(|vi| vi * scale).collect()
            }
            Bases::Explicit { psi, .. } => {
                let inv_n = 1.0 / n as f64;
                (0..n)
                    .map(|i| inv_n * psi.column(i).iter().zip(v).map(|(p, q)| p * q).sum::<f64>())
                    .collect()
            }
        })
    }

    /// `sum_i c_i psi_i`, the inverse of [`Self::image_coefficients`].
    pub fn image_from_coefficients(&self, c: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len("image coefficients", n, c.len())?;
        Ok(match &self.bases {
            Bases::Identity => {
                let scale = (n as f64).sqrt();
                c.iter().map(|ci| ci * scale).collect()
            }
            Bases::Explicit { psi, .. } => {
                let cv = nalgebra::DVector::from_column_slice(c);
                (psi * cv).iter().copied().collect()
            }
        })
    }

    /// Noiseless observation `A x` for `x = sum coeffs_i phi_i`.
    pub fn forward(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len("coefficients", self.n(), coeffs.len())?;
        let scaled: Vec<f64> = coeffs.iter().zip(&self.b).map(|(c, b)| c * b).collect();
        self.image_from_coefficients(&scaled)
    }
}

fn unit(len: usize, i: usize, value: f64) -> Vec<f64> {
    let mut e = vec![0.0; len];
    e[i] = value;
    e
}

fn validate_spectrum(b: &[f64]) -> Result<()> {
    if b.is_empty() {
        return Err(Error::InvalidParameter("spectrum must be non-empty".into()));
    }
    for (i, &bi) in b.iter().enumerate() {
        if !bi.is_finite() || bi == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "singular value b[{i}] = {bi} must be finite and non-zero"
            )));
        }
    }
    for (i, w) in b.windows(2).enumerate() {
        if w[1] * w[1] > w[0] * w[0] {
            return Err(Error::InvalidParameter(format!(
                "b^2 must be non-increasing: b[{}]^2 < b[{}]^2",
                i,
                i + 1
            )));
        }
    }
    Ok(())
}

/// Checks `scale * B^T B = I` entrywise within [`ORTHONORMALITY_TOL`].
fn check_orthonormal(which: &'static str, basis: &DMatrix<f64>, scale: f64) -> Result<()> {
    let gram = basis.transpose() * basis * scale;
    let mut deviation = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((gram[(i, j)] - target).abs());
        }
    }
    if deviation > ORTHONORMALITY_TOL {
        Err(Error::NotOrthonormal { which, deviation })
    } else {
        Ok(())
    }
}

/// Builds the singular system of an `n x d` operator matrix (`d >= n`).
///
/// With `A = U S V^T`, the returned system uses `psi_i = sqrt(n) u_i` and
/// `phi_i = v_i`, hence `b_i = s_i / sqrt(n)`. Singular values below
/// `tolerance * max s` (floored at `max(n, d) * eps`) are a rank defect and
/// an error; nothing is silently truncated.
pub fn build_singular_system(matrix: &DMatrix<f64>, tolerance: f64) -> Result<SingularSystem> {
    let (n, d) = matrix.shape();
    if n == 0 {
        return Err(Error::InvalidParameter("operator has no rows".into()));
    }
    if d < n {
        return Err(Error::DimensionMismatch {
            what: "operator columns (d >= n)",
            expected: n,
            found: d,
        });
    }
    if !(tolerance >= 0.0) || !tolerance.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be finite and non-negative, got {tolerance}"
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "operator has non-finite entries".into(),
        ));
    }

    let svd = nalgebra::SVD::new(matrix.clone(), true, true);
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = s_max * tolerance.max(n.max(d) as f64 * f64::EPSILON);
    let rank = s.iter().filter(|&&v| v > cutoff).count();
    if s_max == 0.0 || rank < n {
        return Err(Error::RankDeficient { rank, n });
    }

    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let root_n = (n as f64).sqrt();
    let b: Vec<f64> = s.iter().map(|si| si / root_n).collect();
    let psi = u.columns(0, n) * root_n;
    let phi = v_t.rows(0, n).transpose();
    SingularSystem::from_bases(b, phi, psi)
}

/// Per-coordinate noise variances `sigma^2 b_i^-2 / n`.
pub fn noise_variances(system: &SingularSystem, sigma: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let n = system.n() as f64;
    Ok(system
        .spectrum()
        .iter()
        .map(|b| sigma * sigma / (b * b * n))
        .collect())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "noise level sigma must be positive and finite, got {sigma}"
        )))
    }
}

/// Heteroscedastic sequence data `ydag_i = x_i + eta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceObservation {
    ydag: Vec<f64>,
    variances: Vec<f64>,
}

impl SequenceObservation {
    pub fn new(ydag: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        check_len("variances", ydag.len(), variances.len())?;
        if let Some((i, v)) = variances
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "variance[{i}] = {v} must be positive and finite"
            )));
        }
        Ok(Self { ydag, variances })
    }

    pub fn n(&self) -> usize {
        self.ydag.len()
    }

    pub fn ydag(&self) -> &[f64] {
        &self.ydag
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

/// Reduces an observation vector to sequence space:
/// `ydag_i = b_i^-1 <y, psi_i>_n`.
pub fn to_sequence(y: &[f64], system: &SingularSystem, sigma: f64) -> Result<SequenceObservation> {
    let coeffs = system.image_coefficients(y)?;
    let ydag = coeffs
        .iter()
        .zip(system.spectrum())
        .map(|(c, b)| c / b)
        .collect();
    SequenceObservation::new(ydag, noise_variances(system, sigma)?)
}

/// Reconstructs `sum_i coeffs_i phi_i` in the source space `R^d`.
pub fn synthesize(coeffs: &[f64], system: &SingularSystem) -> Result<Vec<f64>> {
    check_len("coefficients", system.n(), coeffs.len())?;
    Ok(match &system.bases {
        Bases::Identity => coeffs.to_vec(),
        Bases::Explicit { phi, .. } => {
            let c = nalgebra::DVector::from_column_slice(coeffs);
            (phi * c).iter().copied().collect()
        }
    })
}

/// Ground truth for oracle evaluation and simulation: true coefficients
/// `x_i = <x0, phi_i>`, noise level and operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    x: Vec<f64>,
    sigma: f64,
    system: SingularSystem,
    variances: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(x: Vec<f64>, sigma: f64, system: SingularSystem) -> Result<Self> {
        check_len("coefficients x", system.n(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "coefficients must be finite".into(),
            ));
        }
        let variances = noise_variances(&system, sigma)?;
        Ok(Self {
            x,
            sigma,
            system,
            variances,
        })
    }

    /// Spectrum-level instance with identity bases.
    pub fn from_spectrum(b: Vec<f64>, x: Vec<f64>, sigma: f64) -> Result<Self> {
        Self::new(x, sigma, SingularSystem::from_spectrum(b)?)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn system(&self) -> &SingularSystem {
        &self.system
    }

    /// Cached `sigma_i^2`.
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `||x_dagger||^2 = sum x_i^2`.
    pub fn signal_norm_sq(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum()
    }

    /// Sequence observation for a given realization of the per-coordinate
    /// noise `eta`.
    pub fn observe(&self, eta: &[f64]) -> Result<SequenceObservation> {
        check_len("eta", self.n(), eta.len())?;
        let ydag = self.x.iter().zip(eta).map(|(x, e)| x + e).collect();
        SequenceObservation::new(ydag, self.variances.clone())
    }
}
