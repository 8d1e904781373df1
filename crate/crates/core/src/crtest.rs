//! Test of independence between failure time and cause of failure for
//! left-truncated right-censored competing risks data.
//!
//! The statistic is the IPCW U-statistic of degree 4 with kernel
//!
//! ```text
//! psi*(1..4) = +1  if T1 > T2 > T3 > T4, J1 = 1, J3 = 2
//!              -1  if T1 > T2 > T3 > T4, J1 = 2, J3 = 1
//!               0  otherwise
//! ```
//!
//! symmetrized by sorting the quadruple by decreasing time. It is zero in
//! expectation under independence and positive when cause 1 drifts towards
//! longer lifetimes. Large values reject.
//!
//! Besides the brute-force `O(n^4)` sum this module evaluates the statistic
//! and its first projections with prefix sums over the failures sorted by
//! decreasing time: writing `B(a, c)` for the weight mass strictly between
//! positions `a` and `c` and `D(c)` for the mass strictly below `c`,
//!
//! ```text
//! C(n,4) * Delta = sum_{t_a > t_c} w_a w_c s(J_a, J_c) B(a, c) D(c)
//! ```
//!
//! which only needs running per-cause sums. Tied times never satisfy the
//! strict ordering and contribute nothing.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{ipcw_weights_with, LimitConvention};
use crate::sample::{Cause, LtrcSample};
use crate::ustat::{binomial, variance_from_projection, Kernel, KernelArg};

/// How `sqrt(n) * Delta` is standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scaling {
    /// `z = sqrt(n) Delta / sigma_1c`, the rejection rule as usually printed.
    #[default]
    #[serde(rename = "as-printed")]
    AsPrinted,
    /// `z = sqrt(n) Delta / (4 sigma_1c)`, matching the limiting variance
    /// `16 sigma_1c^2` of a degree-4 statistic.
    #[serde(rename = "theorem3")]
    Theorem3,
}

impl Scaling {
    pub fn factor(self) -> f64 {
        match self {
            Scaling::AsPrinted => 1.0,
            Scaling::Theorem3 => 4.0,
        }
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scaling::AsPrinted => "as-printed",
            Scaling::Theorem3 => "theorem3",
        })
    }
}

impl FromStr for Scaling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "as-printed" => Ok(Scaling::AsPrinted),
            "theorem3" => Ok(Scaling::Theorem3),
            other => Err(format!("unknown scaling `{other}` (expected as-printed or theorem3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestOptions {
    pub convention: LimitConvention,
    pub scaling: Scaling,
}

/// Statistic, variance and standardized value, before a level is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestStatistic {
    pub delta_hat: f64,
    pub sigma_sq: f64,
    pub z: f64,
    pub ties_discarded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub delta_hat: f64,
    /// `sigma_1c^2`.
    pub sigma_sq: f64,
    pub z: f64,
    /// Upper-tail normal probability `1 - Phi(z)`.
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n: usize,
    pub n_failures: usize,
    pub n_censored: usize,
    /// Quadruples of failures dropped because two of their times tie.
    pub ties_discarded: u64,
    pub options: TestOptions,
}

fn sign(first: Cause, third: Cause) -> f64 {
    match (first, third) {
        (Cause::One, Cause::Two) => 1.0,
        (Cause::Two, Cause::One) => -1.0,
        _ => 0.0,
    }
}

/// Symmetrized kernel on four failures: sorts by decreasing time, returns 0
/// on any tie, otherwise `psi*` of the sorted tuple.
pub fn psi_kernel(args: &[KernelArg; 4]) -> Result<i8> {
    let mut labelled = [(0.0, Cause::One); 4];
    for (position, arg) in args.iter().enumerate() {
        let cause = arg.cause.ok_or(Error::MissingCause { position })?;
        labelled[position] = (arg.time, cause);
    }
    labelled.sort_by(|a, b| b.0.total_cmp(&a.0));
    if labelled.windows(2).any(|w| w[0].0 == w[1].0) {
        return Ok(0);
    }
    Ok(sign(labelled[0].1, labelled[2].1) as i8)
}

/// `psi_kernel` as a degree-4 [`Kernel`]. Arguments without a cause evaluate
/// to 0; the test entry points reject such samples up front.
#[derive(Debug, Clone, Copy, Default)]
pub struct PsiKernel;

impl Kernel for PsiKernel {
    fn degree(&self) -> usize {
        4
    }

    fn eval(&self, args: &[KernelArg]) -> f64 {
        let quad: &[KernelArg; 4] = args.try_into().expect("psi kernel takes four arguments");
        psi_kernel(quad).map(f64::from).unwrap_or(0.0)
    }
}

fn labelled_weights(sample: &LtrcSample, convention: LimitConvention, required: usize) -> Result<Vec<f64>> {
    let n = sample.len();
    if n < required {
        return Err(Error::SampleTooSmall { n, required });
    }
    if let Some(row) = sample.observations().iter().position(|o| o.event && o.cause.is_none()) {
        return Err(Error::MissingCauseLabels { row });
    }
    ipcw_weights_with(sample, convention)
}

/// Brute-force statistic: every quadruple of rows, in row order.
pub fn delta_hat_naive(sample: &LtrcSample) -> Result<f64> {
    delta_hat_naive_with(sample, LimitConvention::Left)
}

pub fn delta_hat_naive_with(sample: &LtrcSample, convention: LimitConvention) -> Result<f64> {
    let weights = labelled_weights(sample, convention, 4)?;
    let args: Vec<KernelArg> = sample
        .observations()
        .iter()
        .map(|o| KernelArg { time: o.obs_time, cause: o.cause })
        .collect();
    let active: Vec<usize> = (0..sample.len()).filter(|&i| weights[i] != 0.0).collect();
    let a = active.len();
    let partials: Vec<f64> = (0..a)
        .into_par_iter()
        .map(|p| {
            let i = active[p];
            let mut sum = 0.0;
            for q in p + 1..a {
                let j = active[q];
                for r in q + 1..a {
                    let l = active[r];
                    for &k in &active[r + 1..] {
                        let psi = psi_kernel(&[args[i], args[j], args[l], args[k]])?;
                        if psi != 0 {
                            sum += f64::from(psi) * weights[i] * weights[j] * weights[l] * weights[k];
                        }
                    }
                }
            }
            Ok(sum)
        })
        .collect::<Result<_>>()?;
    Ok(partials.iter().sum::<f64>() / binomial(sample.len(), 4))
}

/// Prefix-sum evaluation of the statistic and of the first projections.
struct FastPath {
    /// Failures by decreasing time: (row, time, cause, weight).
    entries: Vec<(usize, f64, Cause, f64)>,
    /// `[start, end)` ranges of equal times in `entries`.
    groups: Vec<(usize, usize)>,
    /// Weight strictly above / strictly below each entry's time.
    above: Vec<f64>,
    below: Vec<f64>,
    /// `G(c) = sum_{t_a > t_c} w_a s(J_a, J_c) B(a, c)`.
    inner: Vec<f64>,
}

impl FastPath {
    fn new(sample: &LtrcSample, weights: &[f64]) -> Self {
        let mut entries: Vec<(usize, f64, Cause, f64)> = sample
            .observations()
            .iter()
            .enumerate()
            .filter(|&(i, o)| o.event && weights[i] != 0.0)
            .map(|(i, o)| (i, o.obs_time, o.cause.expect("labels checked"), weights[i]))
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=entries.len() {
            if k == entries.len() || entries[k].1 != entries[start].1 {
                groups.push((start, k));
                start = k;
            }
        }

        let total: f64 = entries.iter().map(|e| e.3).sum();
        let len = entries.len();
        let (mut above, mut below, mut inner) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        // Running sums over strictly greater times: mass, per-cause mass and
        // per-cause sum of w_a * (mass at or above t_a).
        let mut mass_gt = 0.0;
        let mut cause_mass = [0.0; 2];
        let mut cause_q = [0.0; 2];
        for &(s, e) in &groups {
            let group_mass: f64 = entries[s..e].iter().map(|x| x.3).sum();
            for k in s..e {
                above[k] = mass_gt;
                below[k] = total - mass_gt - group_mass;
                inner[k] = match entries[k].2 {
                    Cause::Two => cause_mass[0] * mass_gt - cause_q[0],
                    Cause::One => -(cause_mass[1] * mass_gt - cause_q[1]),
                };
            }
            let mass_ge = mass_gt + group_mass;
            for &(_, _, cause, w) in &entries[s..e] {
                let slot = (cause == Cause::Two) as usize;
                cause_mass[slot] += w;
                cause_q[slot] += w * mass_ge;
            }
            mass_gt = mass_ge;
        }
        FastPath { entries, groups, above, below, inner }
    }

    fn numerator(&self) -> f64 {
        self.entries
            .iter()
            .zip(&self.inner)
            .zip(&self.below)
            .map(|((e, g), d)| e.3 * d * g)
            .sum()
    }

    /// Sum of `psi(i, j, k, l) w_j w_k w_l` over triples of other failures,
    /// for every failure `i`, keyed by row.
    fn projection_sums(&self, n_rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_rows];
        let g = self.groups.len();

        // Strictly-above sums, one per group: per-cause mass and sum of w * G.
        let mut gt_cause = vec![[0.0; 2]; g];
        let mut gt_inner = vec![0.0; g];
        let (mut run_cause, mut run_inner) = ([0.0; 2], 0.0);
        for (gi, &(s, e)) in self.groups.iter().enumerate() {
            gt_cause[gi] = run_cause;
            gt_inner[gi] = run_inner;
            for k in s..e {
                run_cause[(self.entries[k].2 == Cause::Two) as usize] += self.entries[k].3;
                run_inner += self.entries[k].3 * self.inner[k];
            }
        }

        // Strictly-below sums per cause: w * D and w * D * (mass above).
        let mut lt_d = vec![[0.0; 2]; g];
        let mut lt_dg = vec![[0.0; 2]; g];
        let (mut run_d, mut run_dg) = ([0.0; 2], [0.0; 2]);
        for (gi, &(s, e)) in self.groups.iter().enumerate().rev() {
            lt_d[gi] = run_d;
            lt_dg[gi] = run_dg;
            for k in s..e {
                let slot = (self.entries[k].2 == Cause::Two) as usize;
                let wd = self.entries[k].3 * self.below[k];
                run_d[slot] += wd;
                run_dg[slot] += wd * self.above[k];
            }
        }

        for (gi, &(s, e)) in self.groups.iter().enumerate() {
            let group_mass: f64 = self.entries[s..e].iter().map(|x| x.3).sum();
            for k in s..e {
                let (row, _, cause, _) = self.entries[k];
                let mass_ge = self.above[k] + group_mass;
                // Anchor largest: the third-largest failure has the other cause.
                let other = (cause.other() == Cause::Two) as usize;
                let largest = sign(cause, cause.other()) * (lt_dg[gi][other] - mass_ge * lt_d[gi][other]);
                // Anchor second: one failure above, two below.
                let second = gt_cause[gi][0] * lt_d[gi][1] - gt_cause[gi][1] * lt_d[gi][0];
                // Anchor third.
                let third = self.below[k] * self.inner[k];
                // Anchor smallest.
                let smallest = gt_inner[gi];
                out[row] = largest + second + third + smallest;
            }
        }
        out
    }

    /// Quadruples of failures whose four times are not all distinct.
    fn tied_quadruples(&self) -> u64 {
        let total = self.entries.len() as u64;
        // Elementary symmetric polynomial e_4 of the group sizes.
        let mut e = [1u64, 0, 0, 0, 0];
        for &(s, end) in &self.groups {
            let size = (end - s) as u64;
            for k in (1..5).rev() {
                e[k] += e[k - 1] * size;
            }
        }
        choose4(total) - e[4]
    }
}

fn choose4(n: u64) -> u64 {
    if n < 4 {
        0
    } else {
        n * (n - 1) / 2 * (n - 2) / 3 * (n - 3) / 4
    }
}

/// Prefix-sum statistic; equal to [`delta_hat_naive`] up to rounding.
pub fn delta_hat_fast(sample: &LtrcSample) -> Result<f64> {
    delta_hat_fast_with(sample, LimitConvention::Left)
}

pub fn delta_hat_fast_with(sample: &LtrcSample, convention: LimitConvention) -> Result<f64> {
    let weights = labelled_weights(sample, convention, 4)?;
    Ok(FastPath::new(sample, &weights).numerator() / binomial(sample.len(), 4))
}

/// Re-weighted projections `psi_1(T_i)` (with the anchor's cause) for every
/// row; censored rows get 0. Same normalization as
/// [`crate::ustat::h1_hat`], divided by `C(n - 1, 3)`.
pub fn psi_projections(sample: &LtrcSample, weights: &[f64]) -> Result<Vec<f64>> {
    let n = sample.len();
    if n < 4 {
        return Err(Error::SampleTooSmall { n, required: 4 });
    }
    let norm = binomial(n - 1, 3);
    let mut sums = FastPath::new(sample, weights).projection_sums(n);
    sums.iter_mut().for_each(|s| *s /= norm);
    Ok(sums)
}

/// `sigma_1c^2`: the variance estimate of the IPCW U-statistic machinery
/// instantiated with the symmetrized kernel.
pub fn test_variance(sample: &LtrcSample) -> Result<f64> {
    test_variance_with(sample, LimitConvention::Left)
}

pub fn test_variance_with(sample: &LtrcSample, convention: LimitConvention) -> Result<f64> {
    let weights = labelled_weights(sample, convention, 5)?;
    let projections = psi_projections(sample, &weights)?;
    Ok(variance_from_projection(sample, &weights, &projections)?.sigma_c_sq)
}

/// Statistic and standardized value without a decision.
pub fn test_statistic(sample: &LtrcSample, options: TestOptions) -> Result<TestStatistic> {
    let weights = labelled_weights(sample, options.convention, 5)?;
    let n = sample.len();
    let fast = FastPath::new(sample, &weights);
    let delta_hat = fast.numerator() / binomial(n, 4);
    let norm = binomial(n - 1, 3);
    let projections: Vec<f64> = fast.projection_sums(n).into_iter().map(|s| s / norm).collect();
    let sigma_sq = variance_from_projection(sample, &weights, &projections)?.sigma_c_sq;
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(Error::DegenerateVariance { value: sigma_sq });
    }
    let z = (n as f64).sqrt() * delta_hat / (options.scaling.factor() * sigma_sq.sqrt());
    Ok(TestStatistic { delta_hat, sigma_sq, z, ties_discarded: fast.tied_quadruples() })
}

/// Upper `alpha` point of the standard normal.
pub fn critical_value(alpha: f64) -> f64 {
    standard_normal().inverse_cdf(1.0 - alpha)
}

/// `1 - Phi(z)`.
pub fn upper_tail(z: f64) -> f64 {
    standard_normal().sf(z)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig { field: "alpha".into(), reason: format!("{alpha} is not in (0, 1)") })
    }
}

/// Rejects for large `z`: `z > z_alpha`.
pub fn rejects(z: f64, alpha: f64) -> bool {
    z > critical_value(alpha)
}

pub fn run_test(sample: &LtrcSample, alpha: f64) -> Result<TestResult> {
    run_test_with(sample, alpha, TestOptions::default())
}

pub fn run_test_with(sample: &LtrcSample, alpha: f64, options: TestOptions) -> Result<TestResult> {
    check_alpha(alpha)?;
    let stat = test_statistic(sample, options)?;
    Ok(TestResult {
        delta_hat: stat.delta_hat,
        sigma_sq: stat.sigma_sq,
        z: stat.z,
        p_value: upper_tail(stat.z),
        reject: rejects(stat.z, alpha),
        alpha,
        n: sample.len(),
        n_failures: sample.n_failures(),
        n_censored: sample.n_censored(),
        ties_discarded: stat.ties_discarded,
        options,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::LtrcObservation;
    use crate::ustat::h1_hat_all;

    fn arg(time: f64, cause: u8) -> KernelArg {
        KernelArg { time, cause: Cause::from_label(cause) }
    }

    fn complete(rows: &[(f64, u8)]) -> LtrcSample {
        LtrcSample::new(
            rows.iter()
                .map(|&(t, c)| LtrcObservation::failure(0.0, t, Cause::from_label(c).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn kernel_branches() {
        assert_eq!(psi_kernel(&[arg(4.0, 1), arg(3.0, 1), arg(2.0, 2), arg(1.0, 1)]).unwrap(), 1);
        assert_eq!(psi_kernel(&[arg(4.0, 2), arg(3.0, 2), arg(2.0, 1), arg(1.0, 2)]).unwrap(), -1);
        // Order of the arguments does not matter.
        assert_eq!(psi_kernel(&[arg(2.0, 2), arg(1.0, 1), arg(4.0, 1), arg(3.0, 2)]).unwrap(), 1);
        assert_eq!(psi_kernel(&[arg(4.0, 1), arg(3.0, 2), arg(2.0, 1), arg(1.0, 2)]).unwrap(), 0);
        assert_eq!(psi_kernel(&[arg(4.0, 1), arg(2.0, 2), arg(2.0, 2), arg(1.0, 2)]).unwrap(), 0);
        let missing = [arg(4.0, 1), KernelArg { time: 3.0, cause: None }, arg(2.0, 2), arg(1.0, 1)];
        assert_eq!(psi_kernel(&missing).unwrap_err(), Error::MissingCause { position: 1 });
    }

    #[test]
    fn single_quadruple() {
        let plus = complete(&[(4.0, 1), (3.0, 1), (2.0, 2), (1.0, 2)]);
        assert_eq!(delta_hat_naive(&plus).unwrap(), 1.0);
        assert_eq!(delta_hat_fast(&plus).unwrap(), 1.0);
        let minus = complete(&[(4.0, 2), (3.0, 1), (2.0, 1), (1.0, 2)]);
        assert_eq!(delta_hat_naive(&minus).unwrap(), -1.0);
        assert_eq!(delta_hat_fast(&minus).unwrap(), -1.0);
    }

    #[test]
    fn equal_causes_give_zero() {
        let s = complete(&[(5.0, 1), (4.0, 1), (3.0, 1), (2.0, 1), (1.0, 1)]);
        assert_eq!(delta_hat_fast(&s).unwrap(), 0.0);
        assert_eq!(test_variance(&s).unwrap(), 0.0);
        assert!(matches!(run_test(&s, 0.05).unwrap_err(), Error::DegenerateVariance { .. }));
    }

    #[test]
    fn too_small_and_unlabelled() {
        let s = complete(&[(3.0, 1), (2.0, 2), (1.0, 1)]);
        assert_eq!(delta_hat_fast(&s).unwrap_err(), Error::SampleTooSmall { n: 3, required: 4 });
        let four = complete(&[(4.0, 1), (3.0, 1), (2.0, 2), (1.0, 2)]);
        assert_eq!(run_test(&four, 0.05).unwrap_err(), Error::SampleTooSmall { n: 4, required: 5 });
        let mut rows = four.observations().to_vec();
        rows[2].cause = None;
        let unlabelled = LtrcSample::new(rows).unwrap();
        assert_eq!(delta_hat_naive(&unlabelled).unwrap_err(), Error::MissingCauseLabels { row: 2 });
    }

    #[test]
    fn fast_matches_naive_with_ties_and_censoring() {
        let s = LtrcSample::new(vec![
            LtrcObservation::failure(0.0, 5.0, Cause::One),
            LtrcObservation::failure(1.0, 5.0, Cause::Two),
            LtrcObservation::censored(0.0, 4.5),
            LtrcObservation::failure(0.5, 4.0, Cause::Two),
            LtrcObservation::failure(0.0, 3.0, Cause::One),
            LtrcObservation::failure(0.0, 3.0, Cause::Two),
            LtrcObservation::censored(2.0, 3.0),
            LtrcObservation::failure(0.0, 2.0, Cause::Two),
            LtrcObservation::failure(0.2, 1.0, Cause::One),
            LtrcObservation::failure(0.0, 0.5, Cause::Two),
        ])
        .unwrap();
        for convention in [LimitConvention::Left, LimitConvention::Right] {
            let naive = delta_hat_naive_with(&s, convention).unwrap();
            let fast = delta_hat_fast_with(&s, convention).unwrap();
            assert!((naive - fast).abs() < 1e-12, "{naive} vs {fast}");
        }
    }

    #[test]
    fn projections_match_enumeration() {
        let s = LtrcSample::new(vec![
            LtrcObservation::failure(0.0, 5.0, Cause::One),
            LtrcObservation::failure(1.0, 5.0, Cause::Two),
            LtrcObservation::censored(0.0, 4.5),
            LtrcObservation::failure(0.5, 4.0, Cause::Two),
            LtrcObservation::failure(0.0, 3.0, Cause::One),
            LtrcObservation::failure(0.0, 3.5, Cause::Two),
            LtrcObservation::censored(2.0, 3.0),
            LtrcObservation::failure(0.0, 2.0, Cause::Two),
            LtrcObservation::failure(0.2, 1.0, Cause::One),
            LtrcObservation::failure(0.0, 0.5, Cause::Two),
        ])
        .unwrap();
        let w = ipcw_weights_with(&s, LimitConvention::Left).unwrap();
        let brute = h1_hat_all(&s, &PsiKernel, &w).unwrap();
        let fast = psi_projections(&s, &w).unwrap();
        for (b, f) in brute.iter().zip(&fast) {
            assert!((b - f).abs() < 1e-12, "{brute:?}\n{fast:?}");
        }
    }

    #[test]
    fn tie_count() {
        let s = complete(&[(5.0, 1), (5.0, 2), (4.0, 1), (3.0, 2), (2.0, 1)]);
        // 5 quadruples, those containing both 5.0 rows are tied: C(3,2) = 3.
        let w = vec![1.0; 5];
        assert_eq!(FastPath::new(&s, &w).tied_quadruples(), 3);
    }

    #[test]
    fn decision_rule() {
        assert!((upper_tail(0.0) - 0.5).abs() < 1e-15);
        assert!(!rejects(0.0, 0.05));
        assert!(!rejects(0.0, 0.49));
        assert!((critical_value(0.05) - 1.644_853_626_951_472_2).abs() < 1e-9);
        assert!(rejects(1.7, 0.05));
        assert_eq!("theorem3".parse::<Scaling>().unwrap(), Scaling::Theorem3);
        assert!("bogus".parse::<Scaling>().is_err());
    }

    #[test]
    fn alpha_is_validated() {
        let s = complete(&[(5.0, 1), (4.0, 2), (3.0, 1), (2.0, 2), (1.0, 1)]);
        assert!(matches!(run_test(&s, 1.0).unwrap_err(), Error::InvalidConfig { .. }));
    }
}
