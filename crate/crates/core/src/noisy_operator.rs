//! Estimation when the eigenvalues are only observed through
//! `bhat_i = b_i + xi_i`, with the eigenvectors known.
//!
//! Everything here is conditional on the realized eigenvalue noise `xi`:
//! the observations `bhat` are taken once and treated as fixed, and
//! expectations run over the observation noise only. Sets in this module
//! use strict inequalities.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::filters::ModelSet;
use crate::oracles::{BoundReport, RiskDecomposition};
use crate::sequence_model::{ProblemInstance, SingularSystem};

/// Observed spectrum `bhat` with the eigenvalue noise scale `s` and the
/// two-sided mass constant `alpha` used by the selector's gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySpectrum {
    bhat: Vec<f64>,
    s: f64,
    alpha: f64,
}

impl NoisySpectrum {
    pub fn new(bhat: Vec<f64>, s: f64, alpha: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue noise scale s must be positive, got {s}"
            )));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if let Some(index) = bhat.iter().position(|b| *b == 0.0) {
            return Err(Error::ZeroObservedEigenvalue { index });
        }
        if bhat.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter(
                "observed eigenvalues must be finite".into(),
            ));
        }
        Ok(Self { bhat, s, alpha })
    }

    pub fn n(&self) -> usize {
        self.bhat.len()
    }

    pub fn bhat(&self) -> &[f64] {
        &self.bhat
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Gate level `alpha * s` below which an observed eigenvalue is
    /// considered mostly noise.
    pub fn gate(&self) -> f64 {
        self.alpha * self.s
    }

    /// `sigma_hat_i^2 = sigma^2 / (n bhat_i^2)`.
    pub fn plug_in_variances(&self, sigma: f64) -> Vec<f64> {
        let n = self.n() as f64;
        self.bhat
            .iter()
            .map(|b| sigma * sigma / (b * b * n))
            .collect()
    }
}

/// A problem instance together with one realization of `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalContext {
    xi: Vec<f64>,
    instance: ProblemInstance,
    spectrum: NoisySpectrum,
}

impl ConditionalContext {
    /// Forms `bhat = b + xi`.
    pub fn new(instance: ProblemInstance, xi: Vec<f64>, s: f64, alpha: f64) -> Result<Self> {
        check_len("xi", instance.n(), xi.len())?;
        let bhat = instance
            .system()
            .spectrum()
            .iter()
            .zip(&xi)
            .map(|(b, e)| b + e)
            .collect();
        let spectrum = NoisySpectrum::new(bhat, s, alpha)?;
        Ok(Self {
            xi,
            instance,
            spectrum,
        })
    }

    /// Rebuilds a context from stored parts, requiring `bhat == b + xi`
    /// bit for bit.
    pub fn from_parts(
        instance: ProblemInstance,
        xi: Vec<f64>,
        spectrum: NoisySpectrum,
    ) -> Result<Self> {
        check_len("xi", instance.n(), xi.len())?;
        check_len("observed spectrum", instance.n(), spectrum.n())?;
        let consistent = instance
            .system()
            .spectrum()
            .iter()
            .zip(&xi)
            .zip(spectrum.bhat())
            .all(|((b, e), bh)| b + e == *bh);
        if !consistent {
            return Err(Error::InvalidParameter(
                "observed spectrum does not equal b + xi".into(),
            ));
        }
        Ok(Self {
            xi,
            instance,
            spectrum,
        })
    }

    pub fn n(&self) -> usize {
        self.xi.len()
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn spectrum(&self) -> &NoisySpectrum {
        &self.spectrum
    }

    pub fn plug_in_variances(&self) -> Vec<f64> {
        self.spectrum.plug_in_variances(self.instance.sigma())
    }

    pub fn to_record(&self) -> ContextRecord {
        ContextRecord {
            b: self.instance.system().spectrum().to_vec(),
            x: self.instance.x().to_vec(),
            sigma: self.instance.sigma(),
            xi: self.xi.clone(),
            bhat: self.spectrum.bhat().to_vec(),
            s: self.spectrum.s(),
            alpha: self.spectrum.alpha(),
        }
    }

    /// Spectrum-level context from a stored record.
    pub fn from_record(record: &ContextRecord) -> Result<Self> {
        let instance =
            ProblemInstance::from_spectrum(record.b.clone(), record.x.clone(), record.sigma)?;
        let spectrum = NoisySpectrum::new(record.bhat.clone(), record.s, record.alpha)?;
        Self::from_parts(instance, record.xi.clone(), spectrum)
    }
}

/// JSON form of a [`ConditionalContext`]; the realized `xi` is stored
/// explicitly so conditional experiments can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRecord {
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub sigma: f64,
    pub xi: Vec<f64>,
    pub bhat: Vec<f64>,
    pub s: f64,
    pub alpha: f64,
}

/// Tail and mass constants claimed for the eigenvalue noise:
/// `P(xi^2/s^2 > t) <= K' exp(-t/beta')` and
/// `min{P(xi < -alpha s), P(xi > alpha s)} >= C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCertificate2 {
    pub k_prime: f64,
    pub beta_prime: f64,
    pub c: f64,
}

impl TailCertificate2 {
    pub fn new(k_prime: f64, beta_prime: f64, c: f64) -> Result<Self> {
        if !(k_prime > 0.0 && beta_prime > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "K' and beta' must be positive, got {k_prime}, {beta_prime}"
            )));
        }
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "C must lie in (0, 1], got {c}"
            )));
        }
        Ok(Self {
            k_prime,
            beta_prime,
            c,
        })
    }
}

/// `ytilde_i = bhat_i^-1 <y, psi_i>_n`.
pub fn noisy_sequence(
    y: &[f64],
    spectrum: &NoisySpectrum,
    system: &SingularSystem,
) -> Result<Vec<f64>> {
    check_len("observed spectrum", system.n(), spectrum.n())?;
    let coeffs = system.image_coefficients(y)?;
    Ok(coeffs
        .iter()
        .zip(spectrum.bhat())
        .map(|(c, b)| c / b)
        .collect())
}

/// `E_xi(eta_tilde_i^2) = sigma_hat_i^2 + xi_i^2 x_i^2 / bhat_i^2`.
pub fn conditional_noise_power(ctx: &ConditionalContext) -> Vec<f64> {
    ctx.plug_in_variances()
        .iter()
        .zip(ctx.xi())
        .zip(ctx.instance().x())
        .zip(ctx.spectrum().bhat())
        .map(|(((sh, xi), x), bh)| sh + xi * xi * x * x / (bh * bh))
        .collect()
}

/// Conditional oracle `{i : x_i^2 > E_xi(eta_tilde_i^2)}`.
pub fn conditional_oracle(ctx: &ConditionalContext) -> ModelSet {
    let power = conditional_noise_power(ctx);
    ModelSet::from_mask(
        &ctx.instance()
            .x()
            .iter()
            .zip(&power)
            .map(|(x, p)| x * x > *p)
            .collect::<Vec<_>>(),
    )
}

/// First explicit form
/// `{i : 2|bhat_i| > sigma^2 / (n |b_i| x_i^2) + |b_i|}`; `x_i = 0` is
/// never selected.
pub fn conditional_oracle_form1(ctx: &ConditionalContext) -> ModelSet {
    let sigma2 = ctx.instance().sigma().powi(2);
    let n = ctx.n() as f64;
    let mask: Vec<bool> = ctx
        .instance()
        .x()
        .iter()
        .zip(ctx.instance().system().spectrum())
        .zip(ctx.spectrum().bhat())
        .map(|((x, b), bh)| *x != 0.0 && 2.0 * bh.abs() > sigma2 / (n * b.abs() * x * x) + b.abs())
        .collect();
    ModelSet::from_mask(&mask)
}

/// Second explicit form
/// `{i : x_i^2 > sigma^2 / (n (bhat_i^2 - xi_i^2)), |bhat_i| > |b_i| / 2}`.
pub fn conditional_oracle_form2(ctx: &ConditionalContext) -> ModelSet {
    let sigma2 = ctx.instance().sigma().powi(2);
    let n = ctx.n() as f64;
    let mask: Vec<bool> = ctx
        .instance()
        .x()
        .iter()
        .zip(ctx.instance().system().spectrum())
        .zip(ctx.spectrum().bhat())
        .zip(ctx.xi())
        .map(|(((x, b), bh), xi)| {
            x * x > sigma2 / (n * (bh * bh - xi * xi)) && bh.abs() > b.abs() / 2.0
        })
        .collect();
    ModelSet::from_mask(&mask)
}

/// Coordinates where the explicit forms are not equivalent to the defining
/// inequality: `x_i = 0`, `bhat_i^2 = xi_i^2`, or `bhat_i` of the opposite
/// sign to `b_i`.
///
/// Both forms rely on `bhat_i^2 - xi_i^2 = b_i (2 bhat_i - b_i)` having the
/// sign of `|b_i| (2|bhat_i| - |b_i|)`, which fails after a sign flip.
pub fn oracle_form_degeneracies(ctx: &ConditionalContext) -> Vec<bool> {
    ctx.instance()
        .x()
        .iter()
        .zip(ctx.instance().system().spectrum())
        .zip(ctx.spectrum().bhat())
        .zip(ctx.xi())
        .map(|(((x, b), bh), xi)| *x == 0.0 || bh * bh == xi * xi || b.signum() != bh.signum())
        .collect()
}

/// `nu_i = max{beta ln(n^2 sigma_hat_i^2), 0}`.
pub fn noisy_threshold_levels(spectrum: &NoisySpectrum, sigma: f64, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    let n2 = (spectrum.n() * spectrum.n()) as f64;
    Ok(spectrum
        .plug_in_variances(sigma)
        .iter()
        .map(|v| (beta * (n2 * v).ln()).max(0.0))
        .collect())
}

/// `{i : ytilde_i^2 > 8 sigma_hat_i^2 nu_i, |bhat_i| > alpha s}`.
pub fn noisy_threshold_select(
    ytilde: &[f64],
    spectrum: &NoisySpectrum,
    sigma: f64,
    beta: f64,
) -> Result<ModelSet> {
    check_len("ytilde", spectrum.n(), ytilde.len())?;
    let nu = noisy_threshold_levels(spectrum, sigma, beta)?;
    let gate = spectrum.gate();
    let mask: Vec<bool> = ytilde
        .iter()
        .zip(spectrum.plug_in_variances(sigma))
        .zip(&nu)
        .zip(spectrum.bhat())
        .map(|(((y, v), nu), bh)| y * y > 8.0 * v * nu && bh.abs() > gate)
        .collect();
    Ok(ModelSet::from_mask(&mask))
}

/// Conditional risk of a fixed model:
/// `sum_{i not in m} x_i^2 + sum_{i in m} E_xi(eta_tilde_i^2)`.
pub fn conditional_risk(m: &ModelSet, ctx: &ConditionalContext) -> Result<RiskDecomposition> {
    check_len("model dimension", ctx.n(), m.n())?;
    let power = conditional_noise_power(ctx);
    let (mut bias, mut variance) = (0.0, 0.0);
    for ((x, p), keep) in ctx.instance().x().iter().zip(&power).zip(m.mask()) {
        if keep {
            variance += p;
        } else {
            bias += x * x;
        }
    }
    Ok(RiskDecomposition::new(bias, variance))
}

/// `M = {i : |b_i| < 2 alpha s}`.
pub fn m_set(system: &SingularSystem, alpha: f64, s: f64) -> ModelSet {
    let level = 2.0 * alpha * s;
    ModelSet::from_mask(
        &system
            .spectrum()
            .iter()
            .map(|b| b.abs() < level)
            .collect::<Vec<_>>(),
    )
}

/// `s^2 beta' ln n`, the truncation level shared by `kappa` and the
/// per-coordinate decomposition of `xi_i^2`.
pub fn truncation_level(s: f64, beta_prime: f64, n: usize) -> f64 {
    s * s * beta_prime * (n as f64).ln()
}

/// `kappa(xi) = 4 K beta / n
///   + 4 sum_{i not in m*_xi} xi_i^2 x_i^2 / (alpha^2 s^2) 1{xi_i^2 > s^2 beta' ln n}`.
pub fn kappa(ctx: &ConditionalContext, beta: f64, k: f64, beta_prime: f64) -> f64 {
    let n = ctx.n();
    let s = ctx.spectrum().s();
    let alpha = ctx.spectrum().alpha();
    let level = truncation_level(s, beta_prime, n);
    let oracle = conditional_oracle(ctx);
    let tail: f64 = ctx
        .xi()
        .iter()
        .zip(ctx.instance().x())
        .enumerate()
        .filter(|(i, (xi, _))| !oracle.contains(*i) && **xi * **xi > level)
        .map(|(_, (xi, x))| xi * xi * x * x / (alpha * alpha * s * s))
        .sum();
    4.0 * k * beta / n as f64 + 4.0 * tail
}

/// Conditional oracle inequality for the noisy-operator threshold rule:
///
/// `lhs <= (K1' ln n + K2') risk_xi(m*_xi) + sum_{i in M} x_i^2 + kappa(xi)`
///
/// with `K1' = max{18 beta, 4 beta' / alpha^2}` and
/// `K2' = max{9 (beta ln ||x||^2 + 1), 1}`. `lhs` is an estimate of the
/// conditional risk of the threshold estimator.
pub fn theorem2_bound(
    ctx: &ConditionalContext,
    beta: f64,
    k: f64,
    cert: &TailCertificate2,
    lhs: f64,
) -> Result<BoundReport> {
    if !(beta > 0.0 && k > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta and K must be positive, got {beta}, {k}"
        )));
    }
    let n = ctx.n();
    if n <= 2 {
        return Err(Error::InvalidParameter(format!(
            "oracle inequality needs n > 2, got {n}"
        )));
    }
    let norm_sq = ctx.instance().signal_norm_sq();
    if norm_sq == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let alpha = ctx.spectrum().alpha();
    let s = ctx.spectrum().s();
    let k1 = (18.0 * beta).max(4.0 * cert.beta_prime / (alpha * alpha));
    let k2 = (9.0 * (beta * norm_sq.ln() + 1.0)).max(1.0);
    let oracle_risk = conditional_risk(&conditional_oracle(ctx), ctx)?.total;
    let big_m = m_set(ctx.instance().system(), alpha, s);
    let m_bias: f64 = big_m
        .indices()
        .iter()
        .map(|&i| ctx.instance().x()[i].powi(2))
        .sum();
    let kap = kappa(ctx, beta, k, cert.beta_prime);
    let rhs = (k1 * (n as f64).ln() + k2) * oracle_risk + m_bias + kap;
    Ok(BoundReport::new("theorem2", lhs, rhs)
        .with_constant("K1_prime", k1)
        .with_constant("K2_prime", k2)
        .with_constant("K", k)
        .with_constant("beta", beta)
        .with_constant("beta_prime", cert.beta_prime)
        .with_constant("alpha", alpha)
        .with_constant("s", s)
        .with_constant("kappa", kap)
        .with_constant("m_set_bias", m_bias)
        .with_constant("conditional_oracle_risk", oracle_risk))
}

/// Per-coordinate bounds for the noisy selector:
/// `E_xi((eta_tilde^2 - x^2) 1{i in mhat_xi}) <= 4 K beta sigma_hat^2 e^{-nu/beta} + 4 xi^2 x^2/(alpha^2 s^2)`
/// and
/// `E_xi((x^2 - eta_tilde^2) 1{i not in mhat_xi}) <= 9 sigma_hat^2 nu + 8 E_xi(eta_tilde^2) + x^2 1{|bhat| <= alpha s}`.
pub fn lemma3_bounds(ctx: &ConditionalContext, beta: f64, k: f64) -> Result<Vec<(f64, f64)>> {
    let sigma = ctx.instance().sigma();
    let nu = noisy_threshold_levels(ctx.spectrum(), sigma, beta)?;
    let sh = ctx.plug_in_variances();
    let power = conditional_noise_power(ctx);
    let s = ctx.spectrum().s();
    let alpha = ctx.spectrum().alpha();
    let gate = ctx.spectrum().gate();
    Ok((0..ctx.n())
        .map(|i| {
            let x = ctx.instance().x()[i];
            let xi = ctx.xi()[i];
            let first = 4.0 * k * beta * sh[i] * (-nu[i] / beta).exp()
                + 4.0 * xi * xi * x * x / (alpha * alpha * s * s);
            let gated = if ctx.spectrum().bhat()[i].abs() <= gate {
                x * x
            } else {
                0.0
            };
            let second = 9.0 * sh[i] * nu[i] + 8.0 * power[i] + gated;
            (first, second)
        })
        .collect())
}

/// Splits each `xi_i^2` as `(s^2 beta' ln n, xi_i^2 1{xi_i^2 > s^2 beta' ln n})`;
/// the two parts always sum to at least `xi_i^2`.
pub fn lemma4_truncation(xi: &[f64], s: f64, beta_prime: f64, n: usize) -> Vec<(f64, f64)> {
    let level = truncation_level(s, beta_prime, n);
    xi.iter()
        .map(|e| {
            let sq = e * e;
            (level, if sq > level { sq } else { 0.0 })
        })
        .collect()
}

/// `K' beta' s^2 (1 + ln n) / n`, the explicit bound on
/// `E(xi_i^2 1{xi_i^2 > s^2 beta' ln n})`.
pub fn lemma4_expectation_bound(k_prime: f64, beta_prime: f64, s: f64, n: usize) -> f64 {
    let nf = n as f64;
    k_prime * beta_prime * s * s * (1.0 + nf.ln()) / nf
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const R1_XI: [f64; 4] = [0.01, -0.02, 0.05, -0.005];

    fn r1() -> ProblemInstance {
        ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1, 0.01], vec![1.0, 0.1, 2.0, 0.05], 0.2)
            .unwrap()
    }

    fn r1_ctx() -> ConditionalContext {
        ConditionalContext::new(r1(), R1_XI.to_vec(), 0.05, 1.0).unwrap()
    }

    fn close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert_relative_eq!(*g, *w, max_relative = tol);
        }
    }

    #[test]
    fn r1_observed_spectrum() {
        close(
            r1_ctx().spectrum().bhat(),
            &[1.01, 0.48, 0.15, 0.005],
            1e-12,
        );
    }

    #[test]
    fn noisy_sequence_r1() {
        let ctx = r1_ctx();
        let sys = ctx.instance().system();
        let y = sys.forward(ctx.instance().x()).unwrap();
        let yt = noisy_sequence(&y, ctx.spectrum(), sys).unwrap();
        close(&yt, &[1.0 / 1.01, 0.05 / 0.48, 0.2 / 0.15, 0.1], 1e-12);

        let exact = NoisySpectrum::new(sys.spectrum().to_vec(), 0.05, 1.0).unwrap();
        close(
            &noisy_sequence(&y, &exact, sys).unwrap(),
            ctx.instance().x(),
            1e-12,
        );
    }

    #[test]
    fn zero_observed_eigenvalue() {
        assert!(matches!(
            NoisySpectrum::new(vec![1.0, 0.0], 0.1, 1.0),
            Err(Error::ZeroObservedEigenvalue { index: 1 })
        ));
        let inst = r1();
        assert!(matches!(
            ConditionalContext::new(inst, vec![0.0, -0.5, 0.0, 0.0], 0.05, 1.0),
            Err(Error::ZeroObservedEigenvalue { index: 1 })
        ));
        assert!(NoisySpectrum::new(vec![1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn noise_power_r1() {
        let p = conditional_noise_power(&r1_ctx());
        close(
            &p,
            &[
                0.009_900_990_099_009_901,
                0.043_420_138_888_888_89,
                0.888_888_888_888_889,
                400.002_5,
            ],
            1e-12,
        );
    }

    #[test]
    fn noise_power_degenerate_cases() {
        let inst = r1();
        let ctx = ConditionalContext::new(inst.clone(), vec![0.0; 4], 0.05, 1.0).unwrap();
        close(&conditional_noise_power(&ctx), inst.variances(), 1e-14);

        let zero =
            ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1, 0.01], vec![0.0; 4], 0.2).unwrap();
        let ctx = ConditionalContext::new(zero, R1_XI.to_vec(), 0.05, 1.0).unwrap();
        assert_eq!(conditional_noise_power(&ctx), ctx.plug_in_variances());
    }

    #[test]
    fn conditional_oracle_r1_three_ways() {
        let ctx = r1_ctx();
        assert_eq!(conditional_oracle(&ctx).indices(), &[0, 2]);
        assert_eq!(conditional_oracle_form1(&ctx).indices(), &[0, 2]);
        assert_eq!(conditional_oracle_form2(&ctx).indices(), &[0, 2]);
        // i = 3: bhat^2 - xi^2 = 0.02, sigma^2 / (n 0.02) = 0.5
        let (bh, xi) = (0.15f64, 0.05f64);
        assert_relative_eq!(
            0.04 / (4.0 * (bh * bh - xi * xi)),
            0.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn conditional_oracle_without_eigen_noise() {
        let inst = r1();
        let ctx = ConditionalContext::new(inst.clone(), vec![0.0; 4], 0.05, 1.0).unwrap();
        let strict: Vec<bool> = inst
            .x()
            .iter()
            .zip(inst.variances())
            .map(|(x, v)| x * x > *v)
            .collect();
        assert_eq!(conditional_oracle(&ctx), ModelSet::from_mask(&strict));
    }

    #[test]
    fn halved_eigenvalue_never_selected() {
        // bhat_1 = 0.45 <= b_1 / 2 even though x_1 is huge
        let inst =
            ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1], vec![1e6, 1.0, 1.0], 0.2).unwrap();
        let ctx = ConditionalContext::new(inst, vec![-0.55, 0.0, 0.0], 0.05, 1.0).unwrap();
        assert!(!conditional_oracle(&ctx).contains(0));
        assert!(!conditional_oracle_form1(&ctx).contains(0));
        assert!(!conditional_oracle_form2(&ctx).contains(0));
    }

    #[test]
    fn sign_flip_breaks_the_explicit_forms() {
        // b = 0.1, xi = -1 gives bhat = -0.9: the defining inequality rejects,
        // both printed forms accept. Flagged as a degeneracy.
        let inst =
            ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1], vec![1.0, 1.0, 1.0], 0.2).unwrap();
        let ctx = ConditionalContext::new(inst, vec![0.0, 0.0, -1.0], 0.05, 1.0).unwrap();
        assert!(!conditional_oracle(&ctx).contains(2));
        assert!(conditional_oracle_form1(&ctx).contains(2));
        assert!(conditional_oracle_form2(&ctx).contains(2));
        assert_eq!(oracle_form_degeneracies(&ctx), vec![false, false, true]);
    }

    #[test]
    fn noisy_threshold_r1() {
        let ctx = r1_ctx();
        let nu = noisy_threshold_levels(ctx.spectrum(), 0.2, 3.0).unwrap();
        assert_eq!(&nu[..2], &[0.0, 0.0]);
        assert_relative_eq!(nu[2], 5.884_975_518_070_358, max_relative = 1e-9);
        assert_relative_eq!(nu[3], 26.292_159_812_2, max_relative = 1e-9);
        let sh = ctx.plug_in_variances();
        assert_relative_eq!(8.0 * sh[2] * nu[2], 20.924_357_388_3, max_relative = 1e-9);

        let sys = ctx.instance().system();
        let y = sys.forward(ctx.instance().x()).unwrap();
        let yt = noisy_sequence(&y, ctx.spectrum(), sys).unwrap();
        let m = noisy_threshold_select(&yt, ctx.spectrum(), 0.2, 3.0).unwrap();
        assert_eq!(m.indices(), &[0, 1]);
    }

    #[test]
    fn noisy_threshold_gate_and_zero_levels() {
        let spec = NoisySpectrum::new(vec![0.01, -0.02, 0.03], 0.1, 1.0).unwrap();
        assert!(noisy_threshold_select(&[5.0, 5.0, 5.0], &spec, 0.2, 3.0)
            .unwrap()
            .is_empty());

        // sigma_hat^2 <= 1/n^2 everywhere, so nu = 0 and any nonzero ytilde passes
        let spec = NoisySpectrum::new(vec![10.0, 9.0, 8.0], 0.1, 1.0).unwrap();
        assert!(spec.plug_in_variances(0.2).iter().all(|v| *v <= 1.0 / 9.0));
        let m = noisy_threshold_select(&[1e-6, -1e-6, 0.0], &spec, 0.2, 3.0).unwrap();
        assert_eq!(m.indices(), &[0, 1]);
    }

    #[test]
    fn conditional_risk_r1() {
        let ctx = r1_ctx();
        let r = conditional_risk(&ModelSet::new(4, vec![0, 2]).unwrap(), &ctx).unwrap();
        assert_relative_eq!(r.bias, 0.0125, max_relative = 1e-12);
        assert_relative_eq!(r.variance, 0.898_789_878_987_898_8, max_relative = 1e-12);
        assert_relative_eq!(r.total, 0.911_289_878_987_898_8, max_relative = 1e-12);
        let empty = conditional_risk(&ModelSet::empty(4), &ctx).unwrap();
        assert_relative_eq!(empty.bias, 5.0125, max_relative = 1e-14);
        assert_eq!(empty.variance, 0.0);
    }

    #[test]
    fn conditional_risk_matches_known_operator_without_noise() {
        let inst = r1();
        let ctx = ConditionalContext::new(inst.clone(), vec![0.0; 4], 0.05, 1.0).unwrap();
        for bits in 0..16 {
            let m = ModelSet::from_bits(4, bits);
            assert_eq!(
                conditional_risk(&m, &ctx).unwrap(),
                crate::oracles::exact_model_risk(&m, &inst).unwrap()
            );
        }
    }

    #[test]
    fn m_set_cases() {
        let sys = r1().system().clone();
        assert_eq!(m_set(&sys, 1.0, 0.05).indices(), &[3]);
        assert!(m_set(&sys, 1.0, 1e-300).is_empty());
        assert_eq!(m_set(&sys, 1.0, 10.0), ModelSet::full(4));
    }

    #[test]
    fn theorem2_r1_constants() {
        let ctx = r1_ctx();
        let k = (1.0f64 / 3.0).sqrt();
        let cert = TailCertificate2::new(k, 3.0, 0.15).unwrap();
        assert_relative_eq!(
            truncation_level(0.05, 3.0, 4),
            0.010_397_207_708_399_18,
            max_relative = 1e-12
        );
        // every xi_i^2 <= 0.0025 < 0.0104, so kappa = 4 K beta / n = K beta
        assert_relative_eq!(kappa(&ctx, 3.0, k, 3.0), 3.0 * k, max_relative = 1e-14);
        let rep = theorem2_bound(&ctx, 3.0, k, &cert, 0.0).unwrap();
        assert_eq!(rep.constants["K1_prime"], 54.0);
        let k2 = (9.0 * (3.0 * 5.0125f64.ln() + 1.0)).max(1.0);
        assert_relative_eq!(rep.constants["K2_prime"], k2, max_relative = 1e-14);
        let want = (54.0 * 4f64.ln() + k2) * 0.911_289_878_987_898_8 + 0.0025 + 3.0 * k;
        assert_relative_eq!(rep.rhs, want, max_relative = 1e-12);
    }

    #[test]
    fn kappa_tail_term() {
        // xi_4 large and coordinate 4 outside the conditional oracle
        let ctx = ConditionalContext::new(r1(), vec![0.0, 0.0, 0.0, 0.2], 0.05, 1.0).unwrap();
        assert!(!conditional_oracle(&ctx).contains(3));
        let k = 0.5;
        let want = 4.0 * k * 3.0 / 4.0 + 4.0 * 0.04 * 0.0025 / 0.0025;
        assert_relative_eq!(kappa(&ctx, 3.0, k, 3.0), want, max_relative = 1e-12);
    }

    #[test]
    fn lemma3_r1() {
        let ctx = r1_ctx();
        let k = (1.0f64 / 3.0).sqrt();
        let b = lemma3_bounds(&ctx, 3.0, k).unwrap();
        // 9 * 0.444.. * nu_3 + 8 * 0.888..
        assert_relative_eq!(b[2].1, 30.651_013_183_392_54, max_relative = 1e-9);
        // nu_1 = 0: 4 K beta sigma_hat^2 + 4 xi^2 x^2 / (alpha s)^2
        let sh = ctx.plug_in_variances();
        assert_relative_eq!(
            b[0].0,
            4.0 * k * 3.0 * sh[0] + 4.0 * 0.0001 / 0.0025,
            max_relative = 1e-12
        );
        // |bhat_4| = 0.005 <= alpha s adds x_4^2
        let p = conditional_noise_power(&ctx);
        let nu = noisy_threshold_levels(ctx.spectrum(), 0.2, 3.0).unwrap();
        assert_relative_eq!(
            b[3].1,
            9.0 * sh[3] * nu[3] + 8.0 * p[3] + 0.0025,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lemma3_zero_signal() {
        let inst = ProblemInstance::from_spectrum(vec![1.0, 0.5, 0.1], vec![0.0; 3], 0.2).unwrap();
        let ctx = ConditionalContext::new(inst, vec![0.01, 0.02, -0.03], 0.05, 1.0).unwrap();
        let nu = noisy_threshold_levels(ctx.spectrum(), 0.2, 3.0).unwrap();
        let sh = ctx.plug_in_variances();
        for (i, (_, second)) in lemma3_bounds(&ctx, 3.0, 0.5)
            .unwrap()
            .into_iter()
            .enumerate()
        {
            assert_relative_eq!(
                second,
                9.0 * sh[i] * nu[i] + 8.0 * sh[i],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn lemma4_cases() {
        let level = truncation_level(0.05, 3.0, 10);
        let parts = lemma4_truncation(&[0.0, (2.0 * level).sqrt(), 0.01], 0.05, 3.0, 10);
        assert_eq!(parts[0], (level, 0.0));
        assert_relative_eq!(parts[1].1, 2.0 * level, max_relative = 1e-12);
        assert_eq!(parts[2].1, 0.0);
        for (p, e) in parts.iter().zip([0.0f64, (2.0 * level).sqrt(), 0.01]) {
            assert!(p.0 + p.1 >= e * e);
        }
    }

    #[test]
    fn record_round_trip() {
        let ctx = r1_ctx();
        let json = serde_json::to_string(&ctx.to_record()).unwrap();
        let back: ContextRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(ConditionalContext::from_record(&back).unwrap(), ctx);
    }
}
