//! Filter estimators `<xhat(lambda), phi_i> = lambda_i ydag_i` and binary
//! model selection: spectral cut-off, Tikhonov, unbiased risk estimation
//! and the log-penalized threshold selector.
//!
//! Indices are 0-based throughout; coordinate `i` here is coordinate
//! `i + 1` in the usual mathematical notation.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::sequence_model::SequenceObservation;

/// Weight vector `lambda` of a filter estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FilterVector(Vec<f64>);

impl FilterVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "filter weights must be finite".into(),
            ));
        }
        Ok(Self(lambda))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Support of a binary filter. `None` if any weight is fractional.
    pub fn to_model(&self) -> Option<ModelSet> {
        self.is_binary()
            .then(|| ModelSet::from_mask(&self.0.iter().map(|&v| v == 1.0).collect::<Vec<_>>()))
    }
}

/// A model `m`, i.e. a subset of the coordinates `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSet {
    n: usize,
    indices: Vec<usize>,
}

impl ModelSet {
    /// Sorts and deduplicates; every index must be `< n`.
    pub fn new(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidParameter(format!(
                "model index {bad} out of range for n = {n}"
            )));
        }
        Ok(Self { n, indices })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            indices: Vec::new(),
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            indices: (0..n).collect(),
        }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            n: mask.len(),
            indices: mask
                .iter()
                .enumerate()
                .filter_map(|(i, &keep)| keep.then_some(i))
                .collect(),
        }
    }

    /// Subset encoded by the low `n` bits of `bits`.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        Self {
            n,
            indices: (0..n).filter(|i| bits >> i & 1 == 1).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n];
        for &i in &self.indices {
            mask[i] = true;
        }
        mask
    }

    /// Binary filter `1{i in m}`.
    pub fn to_filter(&self) -> FilterVector {
        FilterVector(
            self.mask()
                .into_iter()
                .map(|keep| if keep { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// True when the selection is a spectral cut-off `{0, .., k-1}`.
    pub fn is_prefix(&self) -> bool {
        self.indices.iter().enumerate().all(|(pos, &i)| pos == i)
    }
}

/// `(lambda_i ydag_i)_i`.
pub fn apply_filter(lambda: &FilterVector, obs: &SequenceObservation) -> Result<Vec<f64>> {
    check_len("filter", obs.n(), lambda.len())?;
    Ok(lambda
        .weights()
        .iter()
        .zip(obs.ydag())
        .map(|(l, y)| l * y)
        .collect())
}

/// Projection estimator `xhat_m`: keeps `ydag_i` for `i in m`, zero elsewhere.
pub fn apply_model(m: &ModelSet, obs: &SequenceObservation) -> Result<Vec<f64>> {
    check_len("model dimension", obs.n(), m.n())?;
    let mut out = vec![0.0; obs.n()];
    for &i in m.indices() {
        out[i] = obs.ydag()[i];
    }
    Ok(out)
}

/// `lambda_i = 1{i < k}`.
pub fn spectral_cutoff(k: usize, n: usize) -> Result<FilterVector> {
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "cut-off k = {k} outside [0, {n}]"
        )));
    }
    Ok(FilterVector(
        (0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect(),
    ))
}

/// `lambda_i = 1 / (1 + tau sigma_i^2)`.
pub fn tikhonov(tau: f64, variances: &[f64]) -> Result<FilterVector> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Tikhonov tau must be finite and non-negative, got {tau}"
        )));
    }
    Ok(FilterVector(
        variances.iter().map(|v| 1.0 / (1.0 + tau * v)).collect(),
    ))
}

/// Unbiased risk estimation restricted to binary filters:
/// `{i : ydag_i^2 >= 2 sigma_i^2}`.
pub fn ure_select(obs: &SequenceObservation) -> ModelSet {
    ModelSet::from_mask(
        &obs.ydag()
            .iter()
            .zip(obs.variances())
            .map(|(y, v)| y * y >= 2.0 * v)
            .collect::<Vec<_>>(),
    )
}

/// URE criterion `||ydag - xhat_m||^2 + 2 sum_{i in m} sigma_i^2`.
pub fn ure_criterion(m: &ModelSet, obs: &SequenceObservation) -> Result<f64> {
    check_len("model dimension", obs.n(), m.n())?;
    let mask = m.mask();
    Ok(obs
        .ydag()
        .iter()
        .zip(obs.variances())
        .zip(mask)
        .map(|((y, v), keep)| if keep { 2.0 * v } else { y * y })
        .sum())
}

/// Penalty levels `mu_i` of the threshold selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    /// Tail constant used to derive `mu`; `None` for hand-set levels.
    pub beta: Option<f64>,
    pub mu: Vec<f64>,
}

impl ThresholdParams {
    /// The same level for every coordinate. `mu = 1/2` reproduces URE.
    pub fn constant(n: usize, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "penalty level must be finite and non-negative, got {mu}"
            )));
        }
        Ok(Self {
            beta: None,
            mu: vec![mu; n],
        })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }
}

/// `mu_i = max{beta ln(n^2 sigma_i^2), 0}` (natural log).
///
/// Coordinates with `sigma_i^2 <= 1/n^2` get `mu_i = 0` and are always kept
/// by [`threshold_select`]. For astronomically large variances the product
/// `4 sigma_i^2 mu_i` may overflow to `+inf`, in which case the coordinate
/// is never selected.
pub fn threshold_params(variances: &[f64], beta: f64) -> Result<ThresholdParams> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    let n2 = (variances.len() * variances.len()) as f64;
    Ok(ThresholdParams {
        beta: Some(beta),
        mu: variances
            .iter()
            .map(|v| (beta * (n2 * v).ln()).max(0.0))
            .collect(),
    })
}

/// `{i : ydag_i^2 >= 4 sigma_i^2 mu_i}`; ties are included.
pub fn threshold_select(obs: &SequenceObservation, params: &ThresholdParams) -> Result<ModelSet> {
    check_len("threshold levels", obs.n(), params.n())?;
    Ok(ModelSet::from_mask(
        &obs.ydag()
            .iter()
            .zip(obs.variances())
            .zip(&params.mu)
            .map(|((y, v), mu)| y * y >= 4.0 * v * mu)
            .collect::<Vec<_>>(),
    ))
}

/// BIC-type criterion
/// `||ydag - c||^2 + 4 sum_i sigma_i^2 mu_i 1{c_i != 0}`
/// whose global minimizer is the hard-thresholded `ydag`.
pub fn penalized_criterion(
    candidate: &[f64],
    obs: &SequenceObservation,
    params: &ThresholdParams,
) -> Result<f64> {
    check_len("candidate", obs.n(), candidate.len())?;
    check_len("threshold levels", obs.n(), params.n())?;
    Ok(candidate
        .iter()
        .zip(obs.ydag())
        .zip(obs.variances())
        .zip(&params.mu)
        .map(|(((c, y), v), mu)| {
            let penalty = if *c != 0.0 { 4.0 * v * mu } else { 0.0 };
            (y - c) * (y - c) + penalty
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const R1_VARIANCES: [f64; 4] = [0.01, 0.04, 1.0, 100.0];
    const R1_YDAG: [f64; 4] = [1.0, 0.1, 2.0, 0.05];

    fn r1_obs() -> SequenceObservation {
        SequenceObservation::new(R1_YDAG.to_vec(), R1_VARIANCES.to_vec()).unwrap()
    }

    #[test]
    fn apply_filter_cases() {
        let obs = r1_obs();
        let ones = FilterVector::new(vec![1.0; 4]).unwrap();
        assert_eq!(apply_filter(&ones, &obs).unwrap(), R1_YDAG.to_vec());
        let zeros = FilterVector::new(vec![0.0; 4]).unwrap();
        assert_eq!(apply_filter(&zeros, &obs).unwrap(), vec![0.0; 4]);
        let m = ModelSet::new(4, vec![0, 2]).unwrap();
        assert_eq!(
            apply_filter(&m.to_filter(), &obs).unwrap(),
            vec![1.0, 0.0, 2.0, 0.0]
        );
        assert_eq!(apply_model(&m, &obs).unwrap(), vec![1.0, 0.0, 2.0, 0.0]);
        assert!(apply_filter(&FilterVector::new(vec![1.0; 3]).unwrap(), &obs).is_err());
    }

    #[test]
    fn spectral_cutoff_cases() {
        assert_eq!(spectral_cutoff(4, 4).unwrap().weights(), &[1.0; 4]);
        assert_eq!(spectral_cutoff(0, 4).unwrap().weights(), &[0.0; 4]);
        assert_eq!(
            spectral_cutoff(2, 4).unwrap().weights(),
            &[1.0, 1.0, 0.0, 0.0]
        );
        assert!(spectral_cutoff(5, 4).is_err());
        assert!(spectral_cutoff(2, 4)
            .unwrap()
            .to_model()
            .unwrap()
            .is_prefix());
    }

    #[test]
    fn tikhonov_cases() {
        assert_eq!(tikhonov(0.0, &R1_VARIANCES).unwrap().weights(), &[1.0; 4]);
        let w = tikhonov(1.0, &R1_VARIANCES).unwrap();
        for (got, want) in w.weights().iter().zip([
            0.990_099_009_900_990_1,
            0.961_538_461_538_461_5,
            0.5,
            0.009_900_990_099_009_9,
        ]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        assert!(w.weights().windows(2).all(|p| p[0] > p[1]));
        assert!(w.weights().iter().all(|&l| l > 0.0 && l <= 1.0));
        assert!(tikhonov(-1.0, &R1_VARIANCES).is_err());
    }

    #[test]
    fn ure_on_r1() {
        assert_eq!(ure_select(&r1_obs()).indices(), &[0, 2]);
        let zero = SequenceObservation::new(vec![0.0; 4], R1_VARIANCES.to_vec()).unwrap();
        assert!(ure_select(&zero).is_empty());
    }

    #[test]
    fn threshold_params_r1() {
        let p = threshold_params(&R1_VARIANCES, 3.0).unwrap();
        // 3 ln 16 and 3 ln 1600
        let want = [0.0, 0.0, 8.317_766_166_719_343, 22.133_276_724_683_62];
        for (got, want) in p.mu.iter().zip(want) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        let doubled = threshold_params(&R1_VARIANCES, 6.0).unwrap();
        for (a, b) in p.mu.iter().zip(&doubled.mu) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-12);
        }
        let edge = threshold_params(&[1.0 / 16.0; 4], 3.0).unwrap();
        assert_eq!(edge.mu, vec![0.0; 4]);
        assert!(threshold_params(&R1_VARIANCES, 0.0).is_err());
    }

    #[test]
    fn threshold_select_r1() {
        let p = threshold_params(&R1_VARIANCES, 3.0).unwrap();
        let m = threshold_select(&r1_obs(), &p).unwrap();
        assert_eq!(m.indices(), &[0, 1]);

        // raise ydag_3^2 just above 4 * 1 * 3 ln 16 = 33.2711
        let crossed = SequenceObservation::new(
            vec![1.0, 0.1, 33.272_f64.sqrt(), 0.05],
            R1_VARIANCES.to_vec(),
        )
        .unwrap();
        let m = threshold_select(&crossed, &p).unwrap();
        assert_eq!(m.indices(), &[0, 1, 2]);

        let below = SequenceObservation::new(
            vec![1.0, 0.1, 33.27_f64.sqrt(), 0.05],
            R1_VARIANCES.to_vec(),
        )
        .unwrap();
        assert_eq!(threshold_select(&below, &p).unwrap().indices(), &[0, 1]);
    }

    #[test]
    fn non_monotone_selection_exists() {
        // ydag_4^2 above 400 * 3 ln 1600 = 8853.31 while ydag_3 stays below its threshold
        let obs =
            SequenceObservation::new(vec![1.0, 0.1, 2.0, 95.0], R1_VARIANCES.to_vec()).unwrap();
        let p = threshold_params(&R1_VARIANCES, 3.0).unwrap();
        let m = threshold_select(&obs, &p).unwrap();
        assert_eq!(m.indices(), &[0, 1, 3]);
        assert!(!m.is_prefix());
        let w = m.to_filter();
        assert!(w.weights().windows(2).any(|p| p[0] < p[1]));
    }

    #[test]
    fn tiny_variances_always_selected() {
        let v = vec![0.01, 0.02, 0.03, 0.05];
        let obs = SequenceObservation::new(vec![0.0, -3.0, 1e-9, 0.0], v.clone()).unwrap();
        // n^2 sigma^2 <= 1 for n = 4 and sigma^2 <= 1/16
        let p = threshold_params(&v, 3.0).unwrap();
        assert_eq!(threshold_select(&obs, &p).unwrap(), ModelSet::full(4));
    }

    #[test]
    fn overflowing_threshold_selects_nothing() {
        let v = vec![1e300, 1e308];
        let obs = SequenceObservation::new(vec![1e150, 1e154], v.clone()).unwrap();
        let p = threshold_params(&v, 3.0).unwrap();
        assert!(threshold_select(&obs, &p).unwrap().is_empty());
    }

    #[test]
    fn penalized_criterion_cases() {
        let obs = r1_obs();
        let p = threshold_params(&R1_VARIANCES, 3.0).unwrap();
        let zero = penalized_criterion(&[0.0; 4], &obs, &p).unwrap();
        let norm: f64 = R1_YDAG.iter().map(|v| v * v).sum();
        assert_relative_eq!(zero, norm, max_relative = 1e-14);
        let full = penalized_criterion(&R1_YDAG, &obs, &p).unwrap();
        let pen: f64 = (0..4).map(|i| 4.0 * R1_VARIANCES[i] * p.mu[i]).sum();
        assert_relative_eq!(full, pen, max_relative = 1e-14);
        assert!(penalized_criterion(&[0.0; 3], &obs, &p).is_err());
    }

    #[test]
    fn model_set_basics() {
        let m = ModelSet::new(5, vec![3, 1, 3]).unwrap();
        assert_eq!(m.indices(), &[1, 3]);
        assert!(m.contains(3) && !m.contains(2));
        assert!(ModelSet::new(3, vec![3]).is_err());
        assert_eq!(ModelSet::from_bits(4, 0b1010).indices(), &[1, 3]);
        assert_eq!(m.to_filter().to_model().unwrap(), m);
        assert!(FilterVector::new(vec![0.5]).unwrap().to_model().is_none());
    }
}
