//! Inverse-probability-of-censoring weighted U-statistics.
//!
//! For a symmetric kernel `h` of degree `m` and per-row weights
//! `w_i = delta_i / K_c(T_i)` the statistic is
//!
//! ```text
//! U_m = C(n, m)^-1 * sum_{i_1 < ... < i_m} h(T_i1, ..., T_im) * w_i1 * ... * w_im
//! ```
//!
//! Censored rows have zero weight, so only subsets of failures are
//! enumerated. The projection `h_1`, the function `w(x)` and the asymptotic
//! variance `sigma_c^2 = sigma_1^2 + sigma_2^2` are estimated by the same
//! re-weighting.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::ipcw_weights;
use crate::sample::{Cause, LtrcSample};

/// Above this many subsets the statistic is estimated by sampling subsets.
pub const EXACT_ENUMERATION_LIMIT: f64 = 1e7;
const SUBSAMPLE_DRAWS: usize = 1_000_000;
const SUBSAMPLE_SEED: u64 = 0x5eed_0f_5ab5;

/// One kernel argument: an observed time and, for competing risks kernels,
/// its cause label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelArg {
    pub time: f64,
    pub cause: Option<Cause>,
}

/// Symmetric kernel of fixed degree.
pub trait Kernel: Sync {
    fn degree(&self) -> usize;

    /// Must not depend on the order of `args`; `args.len() == self.degree()`.
    fn eval(&self, args: &[KernelArg]) -> f64;
}

/// Kernel backed by a closure.
pub struct FnKernel<F> {
    degree: usize,
    f: F,
}

impl<F> FnKernel<F>
where
    F: Fn(&[KernelArg]) -> f64 + Sync,
{
    pub fn new(degree: usize, f: F) -> Self {
        assert!(degree >= 1, "kernel degree must be positive");
        FnKernel { degree, f }
    }
}

impl<F> Kernel for FnKernel<F>
where
    F: Fn(&[KernelArg]) -> f64 + Sync,
{
    fn degree(&self) -> usize {
        self.degree
    }

    fn eval(&self, args: &[KernelArg]) -> f64 {
        (self.f)(args)
    }
}

/// Value of a U-statistic together with its Monte Carlo error when the
/// subset sum was sampled instead of enumerated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UStatistic {
    pub value: f64,
    pub mc_standard_error: Option<f64>,
}

/// `(sigma_1^2, sigma_2^2, sigma_c^2)` with `sigma_c^2 = sigma_1^2 + sigma_2^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma_c_sq: f64,
}

impl VarianceEstimate {
    pub fn new(sigma1_sq: f64, sigma2_sq: f64) -> Self {
        VarianceEstimate { sigma1_sq, sigma2_sq, sigma_c_sq: sigma1_sq + sigma2_sq }
    }

    /// Standard error of a degree-`degree` statistic on `n` rows: `m * sigma_c / sqrt(n)`.
    pub fn standard_error(&self, n: usize, degree: usize) -> f64 {
        degree as f64 * (self.sigma_c_sq / n as f64).sqrt()
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Calls `f` on every `k`-subset of `items` in lexicographic order of positions.
pub fn for_each_combination<F>(items: &[usize], k: usize, mut f: F)
where
    F: FnMut(&[usize]),
{
    let n = items.len();
    if k > n {
        return;
    }
    if k == 0 {
        f(&[]);
        return;
    }
    let mut pos: Vec<usize> = (0..k).collect();
    let mut chosen: Vec<usize> = pos.iter().map(|&p| items[p]).collect();
    loop {
        f(&chosen);
        // Rightmost position that can still advance.
        let Some(j) = (0..k).rev().find(|&j| pos[j] < n - k + j) else {
            return;
        };
        pos[j] += 1;
        chosen[j] = items[pos[j]];
        for l in j + 1..k {
            pos[l] = pos[l - 1] + 1;
            chosen[l] = items[pos[l]];
        }
    }
}

fn kernel_args(sample: &LtrcSample) -> Vec<KernelArg> {
    sample
        .observations()
        .iter()
        .map(|o| KernelArg { time: o.obs_time, cause: o.cause })
        .collect()
}

fn check_weights(sample: &LtrcSample, weights: &[f64]) -> Result<()> {
    if weights.len() != sample.len() {
        return Err(Error::WeightLengthMismatch { expected: sample.len(), got: weights.len() });
    }
    match weights.iter().position(|w| !w.is_finite()) {
        Some(row) => Err(Error::NonfiniteWeight { row, weight: weights[row] }),
        None => Ok(()),
    }
}

fn active_rows(weights: &[f64]) -> Vec<usize> {
    (0..weights.len()).filter(|&i| weights[i] != 0.0).collect()
}

/// Weighted U-statistic; see the module docs.
pub fn u_statistic<K: Kernel + ?Sized>(sample: &LtrcSample, kernel: &K, weights: &[f64]) -> Result<f64> {
    u_statistic_detailed(sample, kernel, weights).map(|u| u.value)
}

pub fn u_statistic_detailed<K: Kernel + ?Sized>(
    sample: &LtrcSample,
    kernel: &K,
    weights: &[f64],
) -> Result<UStatistic> {
    let m = kernel.degree();
    let n = sample.len();
    if n < m {
        return Err(Error::SampleTooSmall { n, required: m });
    }
    check_weights(sample, weights)?;
    let args = kernel_args(sample);
    let active = active_rows(weights);
    let normalizer = binomial(n, m);

    if binomial(active.len(), m) <= EXACT_ENUMERATION_LIMIT {
        let sum = exact_subset_sum(kernel, &args, weights, &active, m);
        return Ok(UStatistic { value: sum / normalizer, mc_standard_error: None });
    }

    // Uniform draws from all C(n, m) subsets; those touching a zero weight contribute 0.
    let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
    let mut buf = vec![KernelArg { time: 0.0, cause: None }; m];
    let (mut mean, mut m2) = (0.0, 0.0);
    for draw in 0..SUBSAMPLE_DRAWS {
        let subset = index::sample(&mut rng, n, m);
        let mut w = 1.0;
        for (slot, row) in subset.iter().enumerate() {
            w *= weights[row];
            buf[slot] = args[row];
        }
        let term = if w == 0.0 { 0.0 } else { kernel.eval(&buf) * w };
        let delta = term - mean;
        mean += delta / (draw + 1) as f64;
        m2 += delta * (term - mean);
    }
    let var = m2 / (SUBSAMPLE_DRAWS - 1) as f64;
    Ok(UStatistic { value: mean, mc_standard_error: Some((var / SUBSAMPLE_DRAWS as f64).sqrt()) })
}

/// Sum of `h * prod w` over all `m`-subsets of `active`. Partitioned by the
/// first element and reduced in index order, so the result does not depend
/// on the thread count.
fn exact_subset_sum<K: Kernel + ?Sized>(
    kernel: &K,
    args: &[KernelArg],
    weights: &[f64],
    active: &[usize],
    m: usize,
) -> f64 {
    if active.len() < m {
        return 0.0;
    }
    let partials: Vec<f64> = (0..=active.len() - m)
        .into_par_iter()
        .map(|p| {
            let first = active[p];
            let mut buf = vec![args[first]; m];
            let mut sum = 0.0;
            for_each_combination(&active[p + 1..], m - 1, |rest| {
                let mut w = weights[first];
                for (slot, &row) in rest.iter().enumerate() {
                    w *= weights[row];
                    buf[slot + 1] = args[row];
                }
                sum += kernel.eval(&buf) * w;
            });
            sum
        })
        .collect();
    partials.iter().sum()
}

/// Re-weighted estimate of the first projection `h_1` at `x = T_i`: the
/// average of `h(T_i, T_j2, ..., T_jm) * w_j2 * ... * w_jm` over all
/// `(m - 1)`-subsets of the other rows. Conditions on row `i`'s cause too.
pub fn h1_hat<K: Kernel + ?Sized>(sample: &LtrcSample, kernel: &K, weights: &[f64], i: usize) -> Result<f64> {
    let m = kernel.degree();
    let n = sample.len();
    if n < m {
        return Err(Error::SampleTooSmall { n, required: m });
    }
    check_weights(sample, weights)?;
    let args = kernel_args(sample);
    let others: Vec<usize> = active_rows(weights).into_iter().filter(|&j| j != i).collect();
    Ok(projection_at(kernel, &args, weights, &others, i, n))
}

fn projection_at<K: Kernel + ?Sized>(
    kernel: &K,
    args: &[KernelArg],
    weights: &[f64],
    others: &[usize],
    anchor: usize,
    n: usize,
) -> f64 {
    let m = kernel.degree();
    let mut buf = vec![args[anchor]; m];
    let mut sum = 0.0;
    for_each_combination(others, m - 1, |rest| {
        let mut w = 1.0;
        for (slot, &row) in rest.iter().enumerate() {
            w *= weights[row];
            buf[slot + 1] = args[row];
        }
        sum += kernel.eval(&buf) * w;
    });
    sum / binomial(n - 1, m - 1)
}

/// `h1_hat` at every failure row; censored rows get 0 (they never enter `V_i` or `w`).
pub fn h1_hat_all<K: Kernel + ?Sized>(sample: &LtrcSample, kernel: &K, weights: &[f64]) -> Result<Vec<f64>> {
    let m = kernel.degree();
    let n = sample.len();
    if n < m {
        return Err(Error::SampleTooSmall { n, required: m });
    }
    check_weights(sample, weights)?;
    let args = kernel_args(sample);
    let active = active_rows(weights);
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            if !sample.get(i).event {
                return 0.0;
            }
            let others: Vec<usize> = active.iter().copied().filter(|&j| j != i).collect();
            projection_at(kernel, &args, weights, &others, i, n)
        })
        .collect())
}

/// `w(x) = (1/n) sum_i h1(T_i) I(T_i > x) w_i`, evaluated from precomputed projections.
#[derive(Debug, Clone)]
pub struct WHat {
    n: usize,
    // Failure times ascending, with suffix sums of h1 * w.
    times: Vec<f64>,
    tail: Vec<f64>,
}

impl WHat {
    pub fn new(sample: &LtrcSample, weights: &[f64], h1: &[f64]) -> Self {
        let mut terms: Vec<(f64, f64)> = sample
            .iter_sorted()
            .filter(|(_, o)| o.event)
            .map(|(i, o)| (o.obs_time, h1[i] * weights[i]))
            .collect();
        terms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut tail = vec![0.0; terms.len() + 1];
        for k in (0..terms.len()).rev() {
            tail[k] = tail[k + 1] + terms[k].1;
        }
        WHat { n: sample.len(), times: terms.into_iter().map(|t| t.0).collect(), tail }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let first_above = self.times.partition_point(|&t| t <= x);
        self.tail[first_above] / self.n as f64
    }
}

pub fn w_hat<K: Kernel + ?Sized>(sample: &LtrcSample, kernel: &K, weights: &[f64], x: f64) -> Result<f64> {
    let h1 = h1_hat_all(sample, kernel, weights)?;
    Ok(WHat::new(sample, weights, &h1).eval(x))
}

/// Asymptotic variance estimate from projections `h1` (one per row, ignored
/// on censored rows):
///
/// `sigma_1^2 = sum (V_i - mean V)^2 / (n - 1)` with `V_i = h1(T_i) w_i`, and
/// `sigma_2^2 = sum_{censored i} n * w(T_i)^2 / Y(T_i)^2`.
pub fn variance_from_projection(sample: &LtrcSample, weights: &[f64], h1: &[f64]) -> Result<VarianceEstimate> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::SampleTooSmall { n, required: 2 });
    }
    check_weights(sample, weights)?;
    let v: Vec<f64> = (0..n).map(|i| if sample.get(i).event { h1[i] * weights[i] } else { 0.0 }).collect();
    let v_bar = v.iter().sum::<f64>() / n as f64;
    let sigma1_sq = v.iter().map(|x| (x - v_bar).powi(2)).sum::<f64>() / (n - 1) as f64;

    let w = WHat::new(sample, weights, h1);
    let mut sigma2_sq = 0.0;
    for (_, obs) in sample.iter_sorted().filter(|(_, o)| !o.event) {
        let at_risk = sample.risk_set_size(obs.obs_time);
        if at_risk == 0 {
            return Err(Error::RiskSetEmpty { time: obs.obs_time });
        }
        sigma2_sq += n as f64 * w.eval(obs.obs_time).powi(2) / (at_risk as f64).powi(2);
    }
    Ok(VarianceEstimate::new(sigma1_sq, sigma2_sq))
}

/// Variance estimate with the sample's own IPCW weights.
pub fn variance_estimate<K: Kernel + ?Sized>(sample: &LtrcSample, kernel: &K) -> Result<VarianceEstimate> {
    let weights = ipcw_weights(sample)?;
    variance_estimate_with(sample, kernel, &weights)
}

pub fn variance_estimate_with<K: Kernel + ?Sized>(
    sample: &LtrcSample,
    kernel: &K,
    weights: &[f64],
) -> Result<VarianceEstimate> {
    let h1 = h1_hat_all(sample, kernel, weights)?;
    variance_from_projection(sample, weights, &h1)
}
