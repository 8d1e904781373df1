//! Product-limit and Nelson–Aalen estimators for the censoring distribution
//! under left truncation, and the inverse-probability-of-censoring weights
//! built from them.
//!
//! All estimators aggregate tied events into a single factor per distinct
//! time, and use the truncation-aware risk set `Y(t) = #{L_i <= t <= T_i}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{Cause, LtrcSample};
use crate::step::StepFunction;

/// Which side of a jump of `K_c` the weight denominator reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitConvention {
    /// `K_c(T_i-)`: only censorings strictly before `T_i` count.
    #[default]
    Left,
    /// `K_c(T_i)`: censorings tied with `T_i` count as well.
    Right,
}

impl fmt::Display for LimitConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitConvention::Left => "left",
            LimitConvention::Right => "right",
        })
    }
}

impl FromStr for LimitConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "left" => Ok(LimitConvention::Left),
            "right" => Ok(LimitConvention::Right),
            other => Err(format!("unknown limit convention `{other}` (expected left or right)")),
        }
    }
}

/// Distinct censoring times with their multiplicity `d^c(t)` and risk set `Y(t)`.
fn censoring_steps(sample: &LtrcSample) -> Result<Vec<(f64, usize, usize)>> {
    let mut steps: Vec<(f64, usize, usize)> = Vec::new();
    for (_, obs) in sample.iter_sorted().filter(|(_, o)| !o.event) {
        match steps.last_mut() {
            Some((t, d, _)) if *t == obs.obs_time => *d += 1,
            _ => {
                let at_risk = sample.risk_set_size(obs.obs_time);
                if at_risk == 0 {
                    return Err(Error::RiskSetEmpty { time: obs.obs_time });
                }
                steps.push((obs.obs_time, 1, at_risk));
            }
        }
    }
    Ok(steps)
}

/// Product-limit estimate `K_c(t) = prod_{s <= t} (1 - dN^c(s) / Y(s))` of the
/// censoring survival function.
pub fn censor_survival(sample: &LtrcSample) -> Result<StepFunction> {
    let steps = censoring_steps(sample)?;
    let mut surv = 1.0;
    let (times, values) = steps
        .into_iter()
        .map(|(t, d, y)| {
            surv *= 1.0 - d as f64 / y as f64;
            (t, surv)
        })
        .unzip();
    Ok(StepFunction::new(times, values, 1.0))
}

/// Nelson–Aalen estimate `Lambda_c(t) = sum_{s <= t} dN^c(s) / Y(s)` of the
/// censoring cumulative hazard.
pub fn censor_cum_hazard(sample: &LtrcSample) -> Result<StepFunction> {
    let steps = censoring_steps(sample)?;
    let mut hazard = 0.0;
    let (times, values) = steps
        .into_iter()
        .map(|(t, d, y)| {
            hazard += d as f64 / y as f64;
            (t, hazard)
        })
        .unzip();
    Ok(StepFunction::new(times, values, 0.0))
}

/// Largest gap `|K_c(t) - exp(-Lambda_c(t))|` over all jump times.
///
/// The two estimators agree only asymptotically; this is a diagnostic, the
/// product-limit form is the one used for weighting.
pub fn exp_relation_gap(survival: &StepFunction, cum_hazard: &StepFunction) -> f64 {
    survival
        .jump_times()
        .iter()
        .chain(cum_hazard.jump_times())
        .map(|&t| (survival.eval(t) - (-cum_hazard.eval(t)).exp()).abs())
        .fold(0.0, f64::max)
}

/// IPCW weights `w_i = delta_i / K_c(T_i-)` (left limits), one per row in row order.
pub fn ipcw_weights(sample: &LtrcSample) -> Result<Vec<f64>> {
    ipcw_weights_with(sample, LimitConvention::Left)
}

pub fn ipcw_weights_with(sample: &LtrcSample, convention: LimitConvention) -> Result<Vec<f64>> {
    let survival = censor_survival(sample)?;
    weights_from_survival(sample, &survival, convention)
}

pub fn weights_from_survival(
    sample: &LtrcSample,
    survival: &StepFunction,
    convention: LimitConvention,
) -> Result<Vec<f64>> {
    sample
        .observations()
        .iter()
        .enumerate()
        .map(|(row, obs)| {
            if !obs.event {
                return Ok(0.0);
            }
            let k = match convention {
                LimitConvention::Left => survival.left_limit(obs.obs_time),
                LimitConvention::Right => survival.eval(obs.obs_time),
            };
            if k <= 0.0 {
                Err(Error::ZeroWeightDenominator { row })
            } else {
                Ok(1.0 / k)
            }
        })
        .collect()
}

/// Empirical sub-distribution `S(x) = (1/n) #{T_i <= x, delta_i = 1}`.
pub fn sub_distribution(sample: &LtrcSample) -> StepFunction {
    let n = sample.len() as f64;
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for (_, obs) in sample.iter_sorted().filter(|(_, o)| o.event) {
        count += 1;
        let value = count as f64 / n;
        if times.last() == Some(&obs.obs_time) {
            *values.last_mut().unwrap() = value;
        } else {
            times.push(obs.obs_time);
            values.push(value);
        }
    }
    StepFunction::new(times, values, 0.0)
}

/// IPCW cumulative incidence `F_r(t) = (1/n) sum_i I(T_i <= t, J_i = r) w_i`.
pub fn cumulative_incidence(sample: &LtrcSample, cause: Cause) -> Result<StepFunction> {
    cumulative_incidence_with(sample, cause, LimitConvention::Left)
}

pub fn cumulative_incidence_with(
    sample: &LtrcSample,
    cause: Cause,
    convention: LimitConvention,
) -> Result<StepFunction> {
    if let Some(row) = sample.observations().iter().position(|o| o.event && o.cause.is_none()) {
        return Err(Error::MissingCauseLabels { row });
    }
    let weights = ipcw_weights_with(sample, convention)?;
    Ok(weighted_incidence(sample, &weights, |c| c == Some(cause)))
}

/// `(1/n) sum_i I(T_i <= t) w_i`, the IPCW estimate of the lifetime distribution.
pub fn ipcw_distribution(sample: &LtrcSample, weights: &[f64]) -> StepFunction {
    weighted_incidence(sample, weights, |_| true)
}

fn weighted_incidence<F>(sample: &LtrcSample, weights: &[f64], keep: F) -> StepFunction
where
    F: Fn(Option<Cause>) -> bool,
{
    let n = sample.len() as f64;
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut mass = 0.0;
    for (row, obs) in sample.iter_sorted() {
        if !obs.event || !keep(obs.cause) {
            continue;
        }
        mass += weights[row];
        if times.last() == Some(&obs.obs_time) {
            *values.last_mut().unwrap() = mass / n;
        } else {
            times.push(obs.obs_time);
            values.push(mass / n);
        }
    }
    StepFunction::new(times, values, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::LtrcObservation;

    fn three_point() -> LtrcSample {
        LtrcSample::new(vec![
            LtrcObservation::failure(0.0, 1.0, Cause::One),
            LtrcObservation::censored(0.0, 2.0),
            LtrcObservation::failure(0.0, 3.0, Cause::Two),
        ])
        .unwrap()
    }

    #[test]
    fn product_limit_three_point() {
        let k = censor_survival(&three_point()).unwrap();
        assert_eq!(k.jump_times(), &[2.0]);
        assert_eq!(k.eval(1.9), 1.0);
        assert_eq!(k.eval(2.0), 0.5);
        assert_eq!(k.eval(7.0), 0.5);
    }

    #[test]
    fn product_limit_with_late_entry() {
        let s = LtrcSample::new(vec![
            LtrcObservation::censored(1.5, 2.0),
            LtrcObservation::failure(0.0, 1.0, Cause::One),
            LtrcObservation::failure(0.0, 3.0, Cause::One),
        ])
        .unwrap();
        let k = censor_survival(&s).unwrap();
        assert_eq!(k.eval(2.0), 0.5);
    }

    #[test]
    fn no_censoring_gives_unit_survival() {
        let s = LtrcSample::new(vec![
            LtrcObservation::failure(0.0, 1.0, Cause::One),
            LtrcObservation::failure(0.5, 3.0, Cause::Two),
        ])
        .unwrap();
        assert_eq!(censor_survival(&s).unwrap(), StepFunction::constant(1.0));
        assert_eq!(censor_cum_hazard(&s).unwrap(), StepFunction::constant(0.0));
        assert_eq!(ipcw_weights(&s).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn nelson_aalen_three_point() {
        let s = three_point();
        let h = censor_cum_hazard(&s).unwrap();
        assert_eq!(h.eval(3.0), 0.5);
        let k = censor_survival(&s).unwrap();
        let gap = exp_relation_gap(&k, &h);
        assert!((gap - ((-0.5f64).exp() - 0.5)).abs() < 1e-15);
        assert!((gap - 0.106_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn weights_three_point() {
        assert_eq!(ipcw_weights(&three_point()).unwrap(), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn tied_failure_not_penalized_by_left_limit() {
        let s = LtrcSample::new(vec![
            LtrcObservation::censored(0.0, 2.0),
            LtrcObservation::failure(0.0, 2.0, Cause::One),
            LtrcObservation::failure(0.0, 4.0, Cause::One),
        ])
        .unwrap();
        // Y(2) = 3, K_c(2) = 2/3.
        let left = ipcw_weights_with(&s, LimitConvention::Left).unwrap();
        let right = ipcw_weights_with(&s, LimitConvention::Right).unwrap();
        assert_eq!(left[1], 1.0);
        assert!((right[1] - 1.5).abs() < 1e-15);
        assert!((left[2] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_is_reported() {
        let only = LtrcSample::new(vec![
            LtrcObservation::censored(0.0, 2.0),
            LtrcObservation::failure(2.5, 4.0, Cause::One),
        ])
        .unwrap();
        // Y(2) = 1 (the second unit has not entered), K_c(2) = 0.
        assert_eq!(ipcw_weights(&only).unwrap_err(), Error::ZeroWeightDenominator { row: 1 });
    }

    #[test]
    fn sub_distribution_counts() {
        let f = sub_distribution(&three_point());
        assert!((f.eval(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.eval(3.0) - 2.0 / 3.0).abs() < 1e-15);
        let all_censored = LtrcSample::new(vec![LtrcObservation::censored(0.0, 1.0)]).unwrap();
        assert_eq!(sub_distribution(&all_censored).eval(5.0), 0.0);
    }

    #[test]
    fn incidence_partitions_ipcw_distribution() {
        let s = LtrcSample::new(vec![
            LtrcObservation::failure(0.0, 1.0, Cause::One),
            LtrcObservation::censored(0.5, 2.0),
            LtrcObservation::failure(0.0, 2.5, Cause::Two),
            LtrcObservation::censored(0.0, 3.0),
            LtrcObservation::failure(1.0, 4.0, Cause::One),
        ])
        .unwrap();
        let w = ipcw_weights(&s).unwrap();
        let total = ipcw_distribution(&s, &w);
        let f1 = cumulative_incidence(&s, Cause::One).unwrap();
        let f2 = cumulative_incidence(&s, Cause::Two).unwrap();
        for t in [0.5, 1.0, 2.0, 2.5, 3.5, 4.0, 9.0] {
            assert!((f1.eval(t) + f2.eval(t) - total.eval(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn incidence_requires_labels() {
        let s = LtrcSample::new(vec![LtrcObservation { trunc_time: 0.0, obs_time: 1.0, event: true, cause: None }])
            .unwrap();
        assert_eq!(cumulative_incidence(&s, Cause::One).unwrap_err(), Error::MissingCauseLabels { row: 0 });
    }
}
