//! Seeded noise generation, risk estimation by replication, tail
//! certificates and Monte Carlo certification of the oracle inequalities.
//!
//! Every replication `r` owns the ChaCha8 stream `(seed, domain + r)`.
//! Replications are grouped in fixed blocks of [`BLOCK`]; each block is
//! reduced sequentially and the blocks are merged in index order, so the
//! result does not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    spectral_cutoff, threshold_params, threshold_select, tikhonov, ure_select, ModelSet,
    ThresholdParams,
};
use crate::noisy_operator::{
    conditional_oracle, conditional_risk, lemma3_bounds, lemma4_expectation_bound, m_set,
    noisy_threshold_select, theorem2_bound, truncation_level, ConditionalContext, ContextRecord,
    NoisySpectrum, TailCertificate2,
};
use crate::oracles::{
    exact_filter_risk, exact_model_risk, factor_two_check, gaussian_tail_constant, lemma1_bounds,
    oracle_filter, oracle_filter_risk_closed_form, oracle_model, theorem1_bound, BoundReport,
};
use crate::sequence_model::{ProblemInstance, SequenceObservation};

/// Replications per reduction block.
pub const BLOCK: u64 = 256;

/// Stream domains; a replication or draw index is added to the domain.
pub const EPSILON_DOMAIN: u64 = 0;
pub const XI_DOMAIN: u64 = 1 << 60;
pub const XI_REPLICATION_DOMAIN: u64 = 2 << 60;
pub const TAIL_DOMAIN: u64 = 3 << 60;
pub const TRUNCATION_DOMAIN: u64 = 4 << 60;

/// Grid on which survival functions are compared with their envelope.
pub const TAIL_GRID: [f64; 6] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// Smallest sample size accepted by the tail checks.
pub const MIN_TAIL_SAMPLES: u64 = 10_000;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Centered noise laws, all parametrized to unit variance before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NoiseFamily {
    Gaussian,
    /// Laplace with scale `1/sqrt(2)`.
    Laplace,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    UniformSymmetric,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Laplace => "laplace",
            Self::UniformSymmetric => "uniform-symmetric",
        }
    }

    pub fn sample_unit<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian => StandardNormal.sample(rng),
            Self::Laplace => {
                let e: f64 = Exp1.sample(rng);
                let magnitude = e * std::f64::consts::FRAC_1_SQRT_2;
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            Self::UniformSymmetric => {
                let a = 3f64.sqrt();
                rng.random_range(-a..a)
            }
        }
    }

    /// Whether `P(w^2/scale^2 > t) <= K e^{-t/beta}` can hold for some `K`.
    ///
    /// Gaussian squares are chi-square(1) and need `beta > 2`; uniform
    /// squares are bounded; Laplace squares have no exponential moment.
    pub fn admits_exponential_tail(self, beta: f64) -> bool {
        match self {
            Self::Gaussian => beta > 2.0,
            Self::Laplace => false,
            Self::UniformSymmetric => beta > 0.0,
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "laplace" => Ok(Self::Laplace),
            "uniform-symmetric" | "uniform" => Ok(Self::UniformSymmetric),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

impl TryFrom<String> for NoiseFamily {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NoiseFamily> for String {
    fn from(f: NoiseFamily) -> Self {
        f.name().to_string()
    }
}

/// Claimed tail constants: `(K, beta)` for the observation noise, or
/// `(K', beta', C)` for the eigenvalue noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailCertificate {
    pub k: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<TailCertificate>,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self {
            family,
            scale,
            certificate: None,
        })
    }

    pub fn with_certificate(mut self, certificate: TailCertificate) -> Self {
        self.certificate = Some(certificate);
        self
    }
}

/// `n` i.i.d. centered draws with variance `scale^2`.
pub fn draw_noise<R: Rng + ?Sized>(spec: &NoiseSpec, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| spec.scale * spec.family.sample_unit(rng))
        .collect()
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / total as f64;
        self.m2 += other.m2 + d * d * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }

    fn stderr(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        (self.m2 / (n - 1.0) / n).sqrt()
    }
}

/// Runs `f` for replications `0..replications`, each on its own stream,
/// and returns `(mean, stderr)` of every output slot.
fn replicate<F>(replications: u64, seed: u64, domain: u64, width: usize, f: F) -> Vec<(f64, f64)>
where
    F: Fn(&mut ChaCha8Rng, u64, &mut [f64]) + Sync,
{
    let blocks = replications.div_ceil(BLOCK);
    let partial: Vec<Vec<Moments>> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut acc = vec![Moments::default(); width];
            let mut out = vec![0.0; width];
            let end = ((block + 1) * BLOCK).min(replications);
            for r in block * BLOCK..end {
                let mut rng = rng_for(seed, domain + r);
                f(&mut rng, r, &mut out);
                for (a, v) in acc.iter_mut().zip(&out) {
                    a.push(*v);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); width];
    for block in &partial {
        for (t, m) in total.iter_mut().zip(block) {
            t.merge(m);
        }
    }
    total.iter().map(|m| (m.mean, m.stderr())).collect()
}

/// Runs `f` on a pool with `threads` workers (rayon's default when `None`).
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mean loss over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub id: String,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(replications)`.
    pub stderr: f64,
    pub replications: u64,
    pub seed: u64,
}

/// Estimators understood by [`estimate_risks`]. Cut-off `k` keeps the
/// first `k` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Cutoff(usize),
    Tikhonov(f64),
    Ure,
    Threshold(f64),
    NoisyThreshold { beta: f64, alpha: f64 },
    OracleModel,
    OracleFilter,
    ConditionalOracle,
}

impl Estimator {
    /// Whether the estimator needs a realization of the eigenvalue noise.
    pub fn is_conditional(&self) -> bool {
        matches!(self, Self::NoisyThreshold { .. } | Self::ConditionalOracle)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cutoff(k) => write!(f, "cutoff({k})"),
            Self::Tikhonov(tau) => write!(f, "tikhonov({tau})"),
            Self::Ure => f.write_str("ure"),
            Self::Threshold(beta) => write!(f, "threshold({beta})"),
            Self::NoisyThreshold { beta, alpha } => write!(f, "noisy-threshold({beta},{alpha})"),
            Self::OracleModel => f.write_str("oracle-model"),
            Self::OracleFilter => f.write_str("oracle-filter"),
            Self::ConditionalOracle => f.write_str("conditional-oracle"),
        }
    }
}

fn split_call(id: &str) -> Result<(&str, Vec<&str>)> {
    let id = id.trim();
    match id.find('(') {
        None => Ok((id, Vec::new())),
        Some(open) => {
            let inner = id[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::UnknownEstimator(id.to_string()))?;
            Ok((&id[..open], inner.split(',').map(str::trim).collect()))
        }
    }
}

fn parse_positive(id: &str, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(Error::UnknownEstimator(id.to_string())),
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(id: &str) -> Result<Self> {
        let unknown = || Error::UnknownEstimator(id.to_string());
        let (name, args) = split_call(id)?;
        match (name, args.as_slice()) {
            ("cutoff", [k]) => k.parse().map(Self::Cutoff).map_err(|_| unknown()),
            ("tikhonov", [tau]) => match tau.parse::<f64>() {
                Ok(t) if t >= 0.0 && t.is_finite() => Ok(Self::Tikhonov(t)),
                _ => Err(unknown()),
            },
            ("ure", []) => Ok(Self::Ure),
            ("threshold", [beta]) => parse_positive(id, beta).map(Self::Threshold),
            ("noisy-threshold", [beta, alpha]) => Ok(Self::NoisyThreshold {
                beta: parse_positive(id, beta)?,
                alpha: parse_positive(id, alpha)?,
            }),
            ("oracle-model", []) => Ok(Self::OracleModel),
            ("oracle-filter", []) => Ok(Self::OracleFilter),
            ("conditional-oracle", []) => Ok(Self::ConditionalOracle),
            _ => Err(unknown()),
        }
    }
}

fn is_cutoff_all(id: &str) -> bool {
    matches!(split_call(id), Ok(("cutoff", args)) if args == ["all"])
}

/// Checks that `id` names a known estimator, `cutoff(all)` included,
/// without needing the instance dimension.
pub fn check_estimator_id(id: &str) -> Result<()> {
    if !is_cutoff_all(id) {
        id.parse::<Estimator>()?;
    }
    Ok(())
}

/// Parses estimator ids for an instance of dimension `n`, expanding
/// `cutoff(all)` to `cutoff(0), .., cutoff(n)`.
pub fn parse_estimators<S: AsRef<str>>(ids: &[S], n: usize) -> Result<Vec<Estimator>> {
    let mut out = Vec::new();
    for id in ids {
        let id = id.as_ref();
        if is_cutoff_all(id) {
            out.extend((0..=n).map(Estimator::Cutoff));
            continue;
        }
        let e: Estimator = id.parse()?;
        if let Estimator::Cutoff(k) = e {
            if k > n {
                return Err(Error::InvalidParameter(format!(
                    "{id}: cut-off exceeds n = {n}"
                )));
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// How the eigenvalue noise enters a run.
#[derive(Debug, Clone, Copy)]
pub enum XiSource<'a> {
    /// Known operator; conditional estimators are rejected.
    None,
    /// One realization held fixed across all replications.
    Fixed(&'a ConditionalContext),
    /// A fresh realization per replication (unconditional risk).
    PerReplication { spec: &'a NoiseSpec, alpha: f64 },
}

/// Replication budget and randomness of one Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub replications: u64,
    pub seed: u64,
    pub epsilon: NoiseFamily,
}

impl McSettings {
    pub fn gaussian(replications: u64, seed: u64) -> Self {
        Self {
            replications,
            seed,
            epsilon: NoiseFamily::Gaussian,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidParameter(format!(
                "replications must be at least 2, got {}",
                self.replications
            )));
        }
        Ok(())
    }
}

/// Observation-noise draw of replication `r`, already projected:
/// `e_i = <eps, psi_i>_n`.
fn projected_noise(
    instance: &ProblemInstance,
    family: NoiseFamily,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let spec = NoiseSpec {
        family,
        scale: instance.sigma(),
        certificate: None,
    };
    let eps = draw_noise(&spec, instance.n(), rng);
    instance
        .system()
        .image_coefficients(&eps)
        .expect("noise has the image dimension")
}

fn known_observation(instance: &ProblemInstance, e: &[f64]) -> SequenceObservation {
    let ydag = instance
        .x()
        .iter()
        .zip(e)
        .zip(instance.system().spectrum())
        .map(|((x, e), b)| x + e / b)
        .collect();
    SequenceObservation::new(ydag, instance.variances().to_vec())
        .expect("instance variances are positive")
}

/// `ytilde_i = (b_i x_i + e_i) / bhat_i`.
fn noisy_observation(ctx: &ConditionalContext, e: &[f64]) -> Vec<f64> {
    let inst = ctx.instance();
    inst.x()
        .iter()
        .zip(inst.system().spectrum())
        .zip(e)
        .zip(ctx.spectrum().bhat())
        .map(|(((x, b), e), bh)| (b * x + e) / bh)
        .collect()
}

fn model_loss(m: &ModelSet, estimate: &[f64], x: &[f64]) -> f64 {
    x.iter()
        .zip(estimate)
        .enumerate()
        .map(|(i, (x, y))| {
            if m.contains(i) {
                (y - x) * (y - x)
            } else {
                x * x
            }
        })
        .sum()
}

enum Prepared {
    Filter(Vec<f64>),
    Model(ModelSet),
    Ure,
    Threshold(ThresholdParams),
    NoisyThreshold { beta: f64, alpha: f64 },
    ConditionalOracle,
}

fn prepare(e: &Estimator, instance: &ProblemInstance) -> Result<Prepared> {
    Ok(match *e {
        Estimator::Cutoff(k) => {
            Prepared::Filter(spectral_cutoff(k, instance.n())?.weights().to_vec())
        }
        Estimator::Tikhonov(tau) => {
            Prepared::Filter(tikhonov(tau, instance.variances())?.weights().to_vec())
        }
        Estimator::OracleFilter => Prepared::Filter(oracle_filter(instance).weights().to_vec()),
        Estimator::OracleModel => Prepared::Model(oracle_model(instance)),
        Estimator::Ure => Prepared::Ure,
        Estimator::Threshold(beta) => {
            Prepared::Threshold(threshold_params(instance.variances(), beta)?)
        }
        Estimator::NoisyThreshold { beta, alpha } => Prepared::NoisyThreshold { beta, alpha },
        Estimator::ConditionalOracle => Prepared::ConditionalOracle,
    })
}

fn with_alpha(ctx: &ConditionalContext, alpha: f64) -> NoisySpectrum {
    NoisySpectrum::new(ctx.spectrum().bhat().to_vec(), ctx.spectrum().s(), alpha)
        .expect("alpha validated at parse time")
}

fn loss(
    p: &Prepared,
    instance: &ProblemInstance,
    obs: &SequenceObservation,
    noisy: Option<(&ConditionalContext, &[f64])>,
) -> f64 {
    let x = instance.x();
    match p {
        Prepared::Filter(w) => w
            .iter()
            .zip(obs.ydag())
            .zip(x)
            .map(|((w, y), x)| (w * y - x) * (w * y - x))
            .sum(),
        Prepared::Model(m) => model_loss(m, obs.ydag(), x),
        Prepared::Ure => model_loss(&ure_select(obs), obs.ydag(), x),
        Prepared::Threshold(params) => {
            let m = threshold_select(obs, params).expect("levels sized to the instance");
            model_loss(&m, obs.ydag(), x)
        }
        Prepared::NoisyThreshold { beta, alpha } => {
            let (ctx, yt) = noisy.expect("conditional estimators require xi");
            let m = noisy_threshold_select(yt, &with_alpha(ctx, *alpha), instance.sigma(), *beta)
                .expect("validated parameters");
            model_loss(&m, yt, x)
        }
        Prepared::ConditionalOracle => {
            let (ctx, yt) = noisy.expect("conditional estimators require xi");
            model_loss(&conditional_oracle(ctx), yt, x)
        }
    }
}

/// Draws the `draw`-th fixed realization of the eigenvalue noise.
pub fn draw_xi(spec: &NoiseSpec, n: usize, seed: u64, draw: u64) -> Vec<f64> {
    draw_noise(spec, n, &mut rng_for(seed, XI_DOMAIN + draw))
}

/// Conditional context built from the `draw`-th fixed realization of `xi`.
pub fn draw_context(
    instance: &ProblemInstance,
    spec: &NoiseSpec,
    alpha: f64,
    seed: u64,
    draw: u64,
) -> Result<ConditionalContext> {
    let xi = draw_xi(spec, instance.n(), seed, draw);
    ConditionalContext::new(instance.clone(), xi, spec.scale, alpha)
}

/// Estimates the risk of every estimator on common random numbers.
pub fn estimate_risks(
    instance: &ProblemInstance,
    estimators: &[Estimator],
    xi: XiSource<'_>,
    mc: &McSettings,
) -> Result<Vec<RiskEstimate>> {
    mc.validate()?;
    if estimators.is_empty() {
        return Err(Error::Config("estimator list is empty".into()));
    }
    if let XiSource::Fixed(ctx) = xi {
        if ctx.instance() != instance {
            return Err(Error::InvalidParameter(
                "conditional context belongs to a different instance".into(),
            ));
        }
    }
    if matches!(xi, XiSource::None) {
        if let Some(e) = estimators.iter().find(|e| e.is_conditional()) {
            return Err(Error::Config(format!(
                "{e} needs eigenvalue noise, but none is configured"
            )));
        }
    }
    let prepared: Vec<Prepared> = estimators
        .iter()
        .map(|e| prepare(e, instance))
        .collect::<Result<_>>()?;
    let family = mc.epsilon;
    let seed = mc.seed;
    let stats = replicate(
        mc.replications,
        seed,
        EPSILON_DOMAIN,
        prepared.len(),
        |rng, r, out| {
            let e = projected_noise(instance, family, rng);
            let obs = known_observation(instance, &e);
            let drawn;
            let ctx = match xi {
                XiSource::None => None,
                XiSource::Fixed(ctx) => Some(ctx),
                XiSource::PerReplication { spec, alpha } => {
                    let draw = draw_noise(
                        spec,
                        instance.n(),
                        &mut rng_for(seed, XI_REPLICATION_DOMAIN + r),
                    );
                    drawn = ConditionalContext::new(instance.clone(), draw, spec.scale, alpha).ok();
                    drawn.as_ref()
                }
            };
            let yt = ctx.map(|c| noisy_observation(c, &e));
            let noisy = ctx.zip(yt.as_deref());
            let needs_xi = !matches!(xi, XiSource::None);
            for (slot, p) in out.iter_mut().zip(&prepared) {
                *slot = if needs_xi && noisy.is_none() {
                    f64::NAN
                } else {
                    loss(p, instance, &obs, noisy)
                };
            }
        },
    );
    estimators
        .iter()
        .zip(stats)
        .map(|(e, (mean, stderr))| {
            if !mean.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{e}: non-finite mean loss (an observed eigenvalue was exactly zero)"
                )));
            }
            Ok(RiskEstimate {
                id: e.to_string(),
                mean,
                stderr,
                replications: mc.replications,
                seed,
            })
        })
        .collect()
}

pub fn estimate_risk(
    estimator: &Estimator,
    instance: &ProblemInstance,
    xi: XiSource<'_>,
    mc: &McSettings,
) -> Result<RiskEstimate> {
    Ok(estimate_risks(instance, std::slice::from_ref(estimator), xi, mc)?.remove(0))
}

/// Exact risk of an estimator whose selection does not depend on the data,
/// `None` for data-driven ones.
pub fn exact_risk(
    estimator: &Estimator,
    instance: &ProblemInstance,
    ctx: Option<&ConditionalContext>,
) -> Result<Option<f64>> {
    Ok(match *estimator {
        Estimator::Cutoff(k) => Some(exact_filter_risk(
            &spectral_cutoff(k, instance.n())?,
            instance,
        )?),
        Estimator::Tikhonov(tau) => Some(exact_filter_risk(
            &tikhonov(tau, instance.variances())?,
            instance,
        )?),
        Estimator::OracleModel => Some(exact_model_risk(&oracle_model(instance), instance)?.total),
        Estimator::OracleFilter => Some(oracle_filter_risk_closed_form(instance)),
        Estimator::ConditionalOracle => match ctx {
            Some(ctx) => Some(conditional_risk(&conditional_oracle(ctx), ctx)?.total),
            None => None,
        },
        Estimator::Ure | Estimator::Threshold(_) | Estimator::NoisyThreshold { .. } => None,
    })
}

/// One point of a survival-function check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub envelope: f64,
    /// `envelope + 3 stderr - empirical`; negative means violated.
    pub margin: f64,
    pub ok: bool,
}

/// Two-sided mass check `min{P(w < -alpha scale), P(w > alpha scale)} >= C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassCheck {
    pub alpha: f64,
    pub c: f64,
    pub lower: f64,
    pub lower_stderr: f64,
    pub upper: f64,
    pub upper_stderr: f64,
    /// `min over sides of (frequency + 3 stderr - C)`.
    pub margin: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub family: NoiseFamily,
    pub scale: f64,
    pub certificate: TailCertificate,
    pub samples: u64,
    pub seed: u64,
    /// Whether the family admits the claimed exponential rate at all.
    pub admissible: bool,
    pub points: Vec<TailPoint>,
    pub mass: Option<MassCheck>,
    pub passed: bool,
}

impl TailReport {
    /// First failing check, as reported by [`verify_tail_certificate`].
    pub fn first_violation(&self) -> Option<Error> {
        if !self.admissible {
            return Some(Error::CertificateViolated {
                point: format!("beta = {}", self.certificate.beta),
                detail: format!(
                    "{} noise admits no exponential tail with this rate",
                    self.family
                ),
            });
        }
        if let Some(p) = self.points.iter().find(|p| !p.ok) {
            return Some(Error::CertificateViolated {
                point: format!("t = {}", p.t),
                detail: format!(
                    "empirical survival {:.6} exceeds envelope {:.6} by more than 3 stderr ({:.2e})",
                    p.empirical, p.envelope, p.stderr
                ),
            });
        }
        match &self.mass {
            Some(m) if !m.ok => Some(Error::CertificateViolated {
                point: format!("alpha = {}", m.alpha),
                detail: format!(
                    "tail masses ({:.6}, {:.6}) fall below C = {} by more than 3 stderr",
                    m.lower, m.upper, m.c
                ),
            }),
            _ => None,
        }
    }
}

/// Compares the empirical survival of `w^2/scale^2` with `K e^{-t/beta}`
/// on `grid`, and the two-sided masses beyond `alpha scale` with `C` when
/// both are given. Never fails on a violated certificate; see
/// [`verify_tail_certificate`].
pub fn tail_report(
    spec: &NoiseSpec,
    samples: u64,
    seed: u64,
    alpha: Option<f64>,
    grid: &[f64],
) -> Result<TailReport> {
    let cert = spec
        .certificate
        .ok_or_else(|| Error::InvalidParameter("noise spec carries no tail certificate".into()))?;
    if samples < MIN_TAIL_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "tail checks need at least {MIN_TAIL_SAMPLES} samples, got {samples}"
        )));
    }
    if !(cert.k > 0.0 && cert.beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "certificate constants must be positive, got K = {}, beta = {}",
            cert.k, cert.beta
        )));
    }
    let mass_target = match (alpha, cert.c) {
        (Some(a), Some(c)) => Some((a, c)),
        _ => None,
    };
    let width = grid.len() + 2;
    let stats = replicate(samples, seed, TAIL_DOMAIN, width, |rng, _, out| {
        let w = spec.family.sample_unit(rng);
        let g = w * w;
        for (slot, t) in out.iter_mut().zip(grid) {
            *slot = if g > *t { 1.0 } else { 0.0 };
        }
        let a = mass_target.map_or(f64::INFINITY, |(a, _)| a);
        out[grid.len()] = if w < -a { 1.0 } else { 0.0 };
        out[grid.len() + 1] = if w > a { 1.0 } else { 0.0 };
    });
    let points: Vec<TailPoint> = grid
        .iter()
        .zip(&stats)
        .map(|(t, (p, se))| {
            let envelope = cert.k * (-t / cert.beta).exp();
            let margin = envelope + 3.0 * se - p;
            TailPoint {
                t: *t,
                empirical: *p,
                stderr: *se,
                envelope,
                margin,
                ok: margin >= 0.0,
            }
        })
        .collect();
    let mass = mass_target.map(|(alpha, c)| {
        let (lower, lower_stderr) = stats[grid.len()];
        let (upper, upper_stderr) = stats[grid.len() + 1];
        let margin = (lower + 3.0 * lower_stderr - c).min(upper + 3.0 * upper_stderr - c);
        MassCheck {
            alpha,
            c,
            lower,
            lower_stderr,
            upper,
            upper_stderr,
            margin,
            ok: margin >= 0.0,
        }
    });
    let admissible = spec.family.admits_exponential_tail(cert.beta);
    let passed = admissible && points.iter().all(|p| p.ok) && mass.as_ref().is_none_or(|m| m.ok);
    Ok(TailReport {
        family: spec.family,
        scale: spec.scale,
        certificate: cert,
        samples,
        seed,
        admissible,
        points,
        mass,
        passed,
    })
}

/// [`tail_report`] on [`TAIL_GRID`], failing with
/// [`Error::CertificateViolated`] at the first violated check.
pub fn verify_tail_certificate(
    spec: &NoiseSpec,
    samples: u64,
    seed: u64,
    alpha: Option<f64>,
) -> Result<TailReport> {
    let report = tail_report(spec, samples, seed, alpha, &TAIL_GRID)?;
    match report.first_violation() {
        Some(err) => Err(err),
        None => Ok(report),
    }
}

/// Threshold risk estimate against the known-operator oracle inequality.
pub fn check_theorem1(
    instance: &ProblemInstance,
    beta: f64,
    k: f64,
    mc: &McSettings,
) -> Result<BoundReport> {
    let est = estimate_risk(&Estimator::Threshold(beta), instance, XiSource::None, mc)?;
    Ok(theorem1_bound(instance, beta, k, est.mean)?.with_stderr(est.stderr))
}

/// Noisy-threshold conditional risk estimate against the conditional
/// oracle inequality.
pub fn check_theorem2(
    ctx: &ConditionalContext,
    beta: f64,
    k: f64,
    cert: &TailCertificate2,
    mc: &McSettings,
) -> Result<BoundReport> {
    let est = estimate_risk(
        &Estimator::NoisyThreshold {
            beta,
            alpha: ctx.spectrum().alpha(),
        },
        ctx.instance(),
        XiSource::Fixed(ctx),
        mc,
    )?;
    Ok(theorem2_bound(ctx, beta, k, cert, est.mean)?.with_stderr(est.stderr))
}

fn per_coordinate_reports(
    name: &str,
    stats: &[(f64, f64)],
    bounds: &[(f64, f64)],
) -> Vec<BoundReport> {
    let n = bounds.len();
    let mut out = Vec::with_capacity(2 * n);
    for (i, (first, second)) in bounds.iter().enumerate() {
        let (m1, s1) = stats[i];
        let (m2, s2) = stats[n + i];
        out.push(
            BoundReport::new(format!("{name}.selected[{i}]"), m1, *first)
                .with_stderr(s1)
                .with_constant("index", i as f64),
        );
        out.push(
            BoundReport::new(format!("{name}.rejected[{i}]"), m2, *second)
                .with_stderr(s2)
                .with_constant("index", i as f64),
        );
    }
    out
}

/// Estimates `E((eta_i^2 - x_i^2) 1{i in mhat})` and
/// `E((x_i^2 - eta_i^2) 1{i not in mhat})` for each coordinate and pairs
/// them with the per-coordinate bounds. Judge each with
/// [`BoundReport::consistent_within`].
pub fn certify_lemma1(
    instance: &ProblemInstance,
    beta: f64,
    k: f64,
    mc: &McSettings,
) -> Result<Vec<BoundReport>> {
    mc.validate()?;
    let params = threshold_params(instance.variances(), beta)?;
    let bounds = lemma1_bounds(instance, &params, k)?;
    let n = instance.n();
    let family = mc.epsilon;
    let stats = replicate(
        mc.replications,
        mc.seed,
        EPSILON_DOMAIN,
        2 * n,
        |rng, _, out| {
            let e = projected_noise(instance, family, rng);
            let obs = known_observation(instance, &e);
            let m = threshold_select(&obs, &params).expect("levels sized to the instance");
            for i in 0..n {
                let x2 = instance.x()[i].powi(2);
                let eta2 = (obs.ydag()[i] - instance.x()[i]).powi(2);
                let keep = m.contains(i);
                out[i] = if keep { eta2 - x2 } else { 0.0 };
                out[n + i] = if keep { 0.0 } else { x2 - eta2 };
            }
        },
    );
    Ok(per_coordinate_reports("lemma1", &stats, &bounds))
}

/// Conditional analogue of [`certify_lemma1`] for the noisy selector,
/// with `eta_tilde_i = ytilde_i - x_i`.
pub fn certify_lemma3(
    ctx: &ConditionalContext,
    beta: f64,
    k: f64,
    mc: &McSettings,
) -> Result<Vec<BoundReport>> {
    mc.validate()?;
    let bounds = lemma3_bounds(ctx, beta, k)?;
    let instance = ctx.instance();
    let n = instance.n();
    let family = mc.epsilon;
    let sigma = instance.sigma();
    let stats = replicate(
        mc.replications,
        mc.seed,
        EPSILON_DOMAIN,
        2 * n,
        |rng, _, out| {
            let e = projected_noise(instance, family, rng);
            let yt = noisy_observation(ctx, &e);
            let m = noisy_threshold_select(&yt, ctx.spectrum(), sigma, beta)
                .expect("validated parameters");
            for i in 0..n {
                let x2 = instance.x()[i].powi(2);
                let eta2 = (yt[i] - instance.x()[i]).powi(2);
                let keep = m.contains(i);
                out[i] = if keep { eta2 - x2 } else { 0.0 };
                out[n + i] = if keep { 0.0 } else { x2 - eta2 };
            }
        },
    );
    Ok(per_coordinate_reports("lemma3", &stats, &bounds))
}

/// Estimates `E(xi^2 1{xi^2 > s^2 beta' ln n})` from `draws` scalar draws
/// and compares it with `K' beta' s^2 (1 + ln n) / n`.
pub fn certify_lemma4(
    spec: &NoiseSpec,
    k_prime: f64,
    beta_prime: f64,
    n: usize,
    draws: u64,
    seed: u64,
) -> Result<BoundReport> {
    if draws < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 draws, got {draws}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "truncation level needs n >= 2, got {n}"
        )));
    }
    let s = spec.scale;
    let level = truncation_level(s, beta_prime, n);
    let stats = replicate(draws, seed, TRUNCATION_DOMAIN, 1, |rng, _, out| {
        let xi = s * spec.family.sample_unit(rng);
        let sq = xi * xi;
        out[0] = if sq > level { sq } else { 0.0 };
    });
    let (mean, se) = stats[0];
    let rhs = lemma4_expectation_bound(k_prime, beta_prime, s, n);
    Ok(BoundReport::new(format!("lemma4[n={n}]"), mean, rhs)
        .with_stderr(se)
        .with_constant("n", n as f64)
        .with_constant("s", s)
        .with_constant("K_prime", k_prime)
        .with_constant("beta_prime", beta_prime)
        .with_constant("truncation_level", level))
}

/// `sum_{i in M} x_i^2 <= C^{-1} E||xhat_{m*_xi} - x_dagger||^2`, with the
/// right side averaged over `replications` fresh draws of `xi` using the
/// exact conditional risk for each. The reported stderr is that of the
/// right side; judge with [`BoundReport::consistent_within`].
pub fn check_corollary2(
    instance: &ProblemInstance,
    xi_spec: &NoiseSpec,
    alpha: f64,
    c: f64,
    replications: u64,
    seed: u64,
) -> Result<BoundReport> {
    if replications < 2 {
        return Err(Error::InvalidParameter(format!(
            "replications must be at least 2, got {replications}"
        )));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "C must lie in (0, 1], got {c}"
        )));
    }
    let s = xi_spec.scale;
    let stats = replicate(
        replications,
        seed,
        XI_REPLICATION_DOMAIN,
        1,
        |rng, _, out| {
            let xi = draw_noise(xi_spec, instance.n(), rng);
            out[0] = match ConditionalContext::new(instance.clone(), xi, s, alpha) {
                Ok(ctx) => {
                    conditional_risk(&conditional_oracle(&ctx), &ctx)
                        .expect("context sized to the instance")
                        .total
                }
                Err(_) => f64::NAN,
            };
        },
    );
    let (mean, se) = stats[0];
    if !mean.is_finite() {
        return Err(Error::InvalidParameter(
            "an observed eigenvalue was exactly zero".into(),
        ));
    }
    let big_m = m_set(instance.system(), alpha, s);
    let lhs: f64 = big_m
        .indices()
        .iter()
        .map(|&i| instance.x()[i].powi(2))
        .sum();
    Ok(BoundReport::new("corollary2.m_set", lhs, mean / c)
        .with_stderr(se / c)
        .with_constant("C", c)
        .with_constant("alpha", alpha)
        .with_constant("s", s)
        .with_constant("m_set_size", big_m.len() as f64)
        .with_constant("mean_conditional_oracle_risk", mean))
}

/// Explicit-constant form of the real-valued-oracle corollary, chained
/// from the oracle inequality and the factor-two comparison:
/// `rhs = 2 (1 + max{K1 ln n + K2, 0}) R(lambda*) + K3 / n`.
pub fn corollary1_bound(
    instance: &ProblemInstance,
    beta: f64,
    k: f64,
    lhs: f64,
) -> Result<BoundReport> {
    let t1 = theorem1_bound(instance, beta, k, lhs)?;
    let n = instance.n() as f64;
    let slope = (t1.constants["K1"] * n.ln() + t1.constants["K2"]).max(0.0);
    let k4 = 2.0 * (1.0 + slope);
    let filter_risk = oracle_filter_risk_closed_form(instance);
    let k3 = t1.constants["K3"];
    Ok(
        BoundReport::new("corollary1", lhs, k4 * filter_risk + k3 / n)
            .with_constant("K4_log_n", k4)
            .with_constant("K3", k3)
            .with_constant("oracle_filter_risk", filter_risk),
    )
}

/// Noise configuration of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonConfig {
    #[serde(default = "default_family")]
    pub family: NoiseFamily,
    /// Tail constant `K`; defaults to `sqrt(1 - 2/beta)` for Gaussian noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Gaussian,
            k: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XiMode {
    /// One realization, held fixed across replications.
    #[default]
    Fixed,
    /// Fresh realization per replication.
    PerReplication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiConfig {
    #[serde(default = "default_family")]
    pub family: NoiseFamily,
    /// Standard deviation `s`.
    pub scale: f64,
    #[serde(default)]
    pub mode: XiMode,
    /// Index of the fixed realization.
    #[serde(default)]
    pub draw: u64,
    #[serde(default = "default_beta")]
    pub beta_prime: f64,
    /// Defaults to `sqrt(1 - 2/beta')` for Gaussian noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl XiConfig {
    pub fn spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.family, self.scale)
    }

    pub fn resolved_k_prime(&self) -> Option<f64> {
        self.k_prime.or_else(|| match self.family {
            NoiseFamily::Gaussian => gaussian_tail_constant(self.beta_prime).ok(),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub epsilon: EpsilonConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<XiConfig>,
}

/// Sample sizes of the auxiliary certifications run by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationConfig {
    #[serde(default = "default_samples")]
    pub lemma4_draws: u64,
    #[serde(default = "default_samples")]
    pub corollary2_draws: u64,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        Self {
            lemma4_draws: default_samples(),
            corollary2_draws: default_samples(),
        }
    }
}

fn default_family() -> NoiseFamily {
    NoiseFamily::Gaussian
}

fn default_beta() -> f64 {
    3.0
}

fn default_alpha() -> f64 {
    1.0
}

fn default_replications() -> u64 {
    1000
}

fn default_samples() -> u64 {
    100_000
}

/// Current config schema tag.
pub const CONFIG_SCHEMA: &str = "specfilter/config/1";
/// Current report schema tag.
pub const REPORT_SCHEMA: &str = "specfilter/report/1";

/// Everything a run needs apart from the instance itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub instance: crate::io::InstanceSource,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub estimators: Vec<String>,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub certification: CertificationConfig,
}

impl ExperimentConfig {
    /// Checks everything that does not need the instance.
    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema `{}`, expected `{CONFIG_SCHEMA}`",
                self.schema
            )));
        }
        if self.replications < 2 {
            return Err(Error::Config(format!(
                "replications must be at least 2, got {}",
                self.replications
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        for id in &self.estimators {
            check_estimator_id(id)?;
        }
        if let Some(xi) = &self.noise.xi {
            xi.spec()
                .map_err(|e| Error::Config(format!("noise.xi: {e}")))?;
            if !(xi.beta_prime > 0.0) {
                return Err(Error::Config("noise.xi.beta_prime must be positive".into()));
            }
            if let Some(c) = xi.c {
                if !(c > 0.0 && c <= 1.0) {
                    return Err(Error::Config(format!(
                        "noise.xi.c must lie in (0, 1], got {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tail constant `K` of the observation noise, when known.
    pub fn resolved_k(&self) -> Option<f64> {
        self.noise
            .epsilon
            .k
            .or_else(|| match self.noise.epsilon.family {
                NoiseFamily::Gaussian => gaussian_tail_constant(self.beta).ok(),
                _ => None,
            })
    }

    pub fn mc_settings(&self) -> McSettings {
        McSettings {
            replications: self.replications,
            seed: self.seed,
            epsilon: self.noise.epsilon.family,
        }
    }

    /// The fixed conditional context, when the eigenvalue noise is
    /// configured in fixed mode.
    pub fn conditional_context(
        &self,
        instance: &ProblemInstance,
    ) -> Result<Option<ConditionalContext>> {
        match &self.noise.xi {
            Some(xi) if xi.mode == XiMode::Fixed => Ok(Some(draw_context(
                instance,
                &xi.spec()?,
                self.alpha,
                self.seed,
                xi.draw,
            )?)),
            _ => Ok(None),
        }
    }
}

/// Echo of every effective parameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParameters {
    pub seed: u64,
    pub replications: u64,
    pub beta: f64,
    pub alpha: f64,
    pub k: Option<f64>,
    pub noise: NoiseConfig,
    pub estimators: Vec<String>,
    pub certification: CertificationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub n: usize,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub sigma: f64,
    pub variances: Vec<f64>,
    pub signal_norm_sq: f64,
    pub explicit_bases: bool,
}

impl InstanceSummary {
    pub fn of(instance: &ProblemInstance) -> Self {
        Self {
            n: instance.n(),
            b: instance.system().spectrum().to_vec(),
            x: instance.x().to_vec(),
            sigma: instance.sigma(),
            variances: instance.variances().to_vec(),
            signal_norm_sq: instance.signal_norm_sq(),
            explicit_bases: instance.system().has_explicit_bases(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRisk {
    pub id: String,
    pub risk: f64,
}

/// Best spectral cut-off next to the threshold estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffComparison {
    pub best_cutoff: RiskEstimate,
    pub threshold: RiskEstimate,
    /// `best_cutoff.mean - threshold.mean`.
    pub difference: f64,
    /// `sqrt(se_cutoff^2 + se_threshold^2)`.
    pub combined_stderr: f64,
}

impl CutoffComparison {
    /// Picks the cut-off with the smallest mean among `estimates` and
    /// pairs it with `threshold`.
    pub fn from_estimates(estimates: &[RiskEstimate], threshold: &RiskEstimate) -> Option<Self> {
        let best = estimates
            .iter()
            .filter(|e| e.id.starts_with("cutoff("))
            .min_by(|a, b| a.mean.total_cmp(&b.mean))?;
        Some(Self {
            best_cutoff: best.clone(),
            threshold: threshold.clone(),
            difference: best.mean - threshold.mean,
            combined_stderr: best.stderr.hypot(threshold.stderr),
        })
    }

    /// Threshold strictly better by more than `z` combined standard errors.
    pub fn threshold_wins_by(&self, z: f64) -> bool {
        self.difference > z * self.combined_stderr
    }
}

/// Complete result of [`run_experiment`]; serialized verbatim as the JSON
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub parameters: EffectiveParameters,
    pub instance: InstanceSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditional_context: Option<ContextRecord>,
    pub estimates: Vec<RiskEstimate>,
    pub exact_risks: Vec<ExactRisk>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<CutoffComparison>,
    pub bounds: Vec<BoundReport>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    /// Bound reports that fail at `z` standard errors of slack.
    pub fn failing_bounds(&self, z: f64) -> Vec<&BoundReport> {
        self.bounds
            .iter()
            .filter(|b| !b.consistent_within(z))
            .collect()
    }
}

/// Parts of a run shared by [`run_experiment`] and [`run_bound_checks`].
struct Setup {
    mc: McSettings,
    ctx: Option<ConditionalContext>,
    xi_spec: Option<NoiseSpec>,
}

impl Setup {
    fn new(config: &ExperimentConfig, instance: &ProblemInstance) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            mc: config.mc_settings(),
            ctx: config.conditional_context(instance)?,
            xi_spec: config.noise.xi.as_ref().map(XiConfig::spec).transpose()?,
        })
    }

    fn source<'a>(&'a self, config: &ExperimentConfig) -> XiSource<'a> {
        match (&self.ctx, &self.xi_spec) {
            (Some(ctx), _) => XiSource::Fixed(ctx),
            (None, Some(spec)) => XiSource::PerReplication {
                spec,
                alpha: config.alpha,
            },
            _ => XiSource::None,
        }
    }
}

fn find_or_estimate(
    estimates: &mut Vec<RiskEstimate>,
    estimator: Estimator,
    instance: &ProblemInstance,
    source: XiSource<'_>,
    mc: &McSettings,
) -> Result<RiskEstimate> {
    let id = estimator.to_string();
    if let Some(e) = estimates.iter().find(|e| e.id == id) {
        return Ok(e.clone());
    }
    let e = estimate_risk(&estimator, instance, source, mc)?;
    estimates.push(e.clone());
    Ok(e)
}

fn skip_or_fail(
    result: Result<BoundReport>,
    name: &str,
    notes: &mut Vec<String>,
) -> Result<Option<BoundReport>> {
    match result {
        Ok(b) => Ok(Some(b)),
        Err(e @ (Error::InvalidParameter(_) | Error::DegenerateSignal)) => {
            notes.push(format!("{name} skipped: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Every bound applicable to the configuration. Risk estimates needed as
/// left-hand sides are taken from `estimates` or added to it.
fn collect_bounds(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
    setup: &Setup,
    estimates: &mut Vec<RiskEstimate>,
    notes: &mut Vec<String>,
) -> Result<Vec<BoundReport>> {
    let mc = &setup.mc;
    let mut bounds = vec![factor_two_check(instance)];
    let k = config.resolved_k();
    let Some(k) = k else {
        notes.push(format!(
            "no tail constant K for {} noise; oracle inequality checks skipped",
            config.noise.epsilon.family
        ));
        return Ok(bounds);
    };

    let threshold = find_or_estimate(
        estimates,
        Estimator::Threshold(config.beta),
        instance,
        XiSource::None,
        mc,
    )?;
    let t1 = theorem1_bound(instance, config.beta, k, threshold.mean)
        .map(|b| b.with_stderr(threshold.stderr));
    if let Some(b) = skip_or_fail(t1, "theorem1", notes)? {
        bounds.push(b);
        bounds.push(
            corollary1_bound(instance, config.beta, k, threshold.mean)?
                .with_stderr(threshold.stderr),
        );
    }
    bounds.extend(certify_lemma1(instance, config.beta, k, mc)?);

    let (Some(xi), Some(spec)) = (&config.noise.xi, &setup.xi_spec) else {
        return Ok(bounds);
    };
    let k_prime = xi.resolved_k_prime();
    match k_prime {
        Some(kp) if instance.n() >= 2 => bounds.push(certify_lemma4(
            spec,
            kp,
            xi.beta_prime,
            instance.n(),
            config.certification.lemma4_draws,
            config.seed,
        )?),
        _ => notes.push("lemma4 skipped: no K' for the eigenvalue noise or n < 2".into()),
    }
    if let Some(ctx) = &setup.ctx {
        let noisy = find_or_estimate(
            estimates,
            Estimator::NoisyThreshold {
                beta: config.beta,
                alpha: config.alpha,
            },
            instance,
            XiSource::Fixed(ctx),
            mc,
        )?;
        match k_prime {
            Some(kp) => {
                let cert = TailCertificate2::new(kp, xi.beta_prime, xi.c.unwrap_or(1.0))?;
                let t2 = theorem2_bound(ctx, config.beta, k, &cert, noisy.mean)
                    .map(|b| b.with_stderr(noisy.stderr));
                bounds.extend(skip_or_fail(t2, "theorem2", notes)?);
            }
            None => notes.push("theorem2 skipped: no K' for the eigenvalue noise".into()),
        }
        bounds.extend(certify_lemma3(ctx, config.beta, k, mc)?);
    }
    if let Some(c) = xi.c {
        bounds.push(check_corollary2(
            instance,
            spec,
            config.alpha,
            c,
            config.certification.corollary2_draws,
            config.seed,
        )?);
    }
    Ok(bounds)
}

fn assemble(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
    setup: &Setup,
    estimators: Vec<String>,
    estimates: Vec<RiskEstimate>,
    bounds: Vec<BoundReport>,
    notes: Vec<String>,
) -> Result<ExperimentReport> {
    let fixed = setup.ctx.as_ref();
    let mut exact_risks = Vec::new();
    for est in &estimates {
        let e: Estimator = est.id.parse()?;
        if let Some(risk) = exact_risk(&e, instance, fixed)? {
            exact_risks.push(ExactRisk {
                id: est.id.clone(),
                risk,
            });
        }
    }
    let threshold_id = Estimator::Threshold(config.beta).to_string();
    let comparison = estimates
        .iter()
        .find(|e| e.id == threshold_id)
        .and_then(|t| CutoffComparison::from_estimates(&estimates, t));
    Ok(ExperimentReport {
        schema: REPORT_SCHEMA.to_string(),
        parameters: EffectiveParameters {
            seed: config.seed,
            replications: config.replications,
            beta: config.beta,
            alpha: config.alpha,
            k: config.resolved_k(),
            noise: config.noise.clone(),
            estimators,
            certification: config.certification,
        },
        instance: InstanceSummary::of(instance),
        conditional_context: fixed.map(ConditionalContext::to_record),
        estimates,
        exact_risks,
        comparison,
        bounds,
        notes,
    })
}

const FAMILY_NOTE: &str =
    "instance and noise families are artifact choices, not prescribed by the method";

/// Estimates every configured estimator on common random numbers and runs
/// every applicable bound check. Pure: no files are touched.
pub fn run_experiment(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
) -> Result<ExperimentReport> {
    let setup = Setup::new(config, instance)?;
    let estimators = parse_estimators(&config.estimators, instance.n())?;
    if estimators.is_empty() {
        return Err(Error::Config("estimator list is empty".into()));
    }
    let mut estimates = estimate_risks(instance, &estimators, setup.source(config), &setup.mc)?;
    let mut notes = vec![FAMILY_NOTE.to_string()];
    let bounds = collect_bounds(config, instance, &setup, &mut estimates, &mut notes)?;
    let ids = estimators.iter().map(Estimator::to_string).collect();
    assemble(config, instance, &setup, ids, estimates, bounds, notes)
}

/// Estimates only; no bound checks.
pub fn run_estimates(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
) -> Result<ExperimentReport> {
    let setup = Setup::new(config, instance)?;
    let estimators = parse_estimators(&config.estimators, instance.n())?;
    if estimators.is_empty() {
        return Err(Error::Config("estimator list is empty".into()));
    }
    let estimates = estimate_risks(instance, &estimators, setup.source(config), &setup.mc)?;
    let ids = estimators.iter().map(Estimator::to_string).collect();
    assemble(
        config,
        instance,
        &setup,
        ids,
        estimates,
        Vec::new(),
        vec![FAMILY_NOTE.to_string()],
    )
}

/// Bound checks only; the estimator list may be empty. Left-hand sides
/// are estimated as needed and listed under `estimates`.
pub fn run_bound_checks(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
) -> Result<ExperimentReport> {
    let setup = Setup::new(config, instance)?;
    let mut estimates = Vec::new();
    let mut notes = vec![FAMILY_NOTE.to_string()];
    let bounds = collect_bounds(config, instance, &setup, &mut estimates, &mut notes)?;
    assemble(
        config,
        instance,
        &setup,
        Vec::new(),
        estimates,
        bounds,
        notes,
    )
}

/// Sample mean and unbiased variance, for quick checks.
pub fn sample_moments(draws: &[f64]) -> Result<(f64, f64)> {
    if draws.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two draws, got {}",
            draws.len()
        )));
    }
    let mut m = Moments::default();
    for d in draws {
        m.push(*d);
    }
    Ok((m.mean, m.m2 / (m.count as f64 - 1.0)))
}
