//! Observation model for left-truncated right-censored samples.
//!
//! Every stored row is an *observed* unit: its observed time exceeds its
//! entry (truncation) time. Units that failed or were censored before entry
//! never reach the sample, so no truncation indicator is kept per row.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cause of failure in a two-cause competing risks model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    One,
    Two,
}

impl Cause {
    pub fn from_label(label: u8) -> Option<Cause> {
        match label {
            1 => Some(Cause::One),
            2 => Some(Cause::Two),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Cause::One => 1,
            Cause::Two => 2,
        }
    }

    pub fn other(self) -> Cause {
        match self {
            Cause::One => Cause::Two,
            Cause::Two => Cause::One,
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// An unvalidated row, as read from a file or produced by a generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub trunc_time: f64,
    pub obs_time: f64,
    pub event: bool,
    pub cause: Option<u8>,
}

/// One observed subject: entry time `L`, observed time `T = min(X, C)`,
/// failure indicator and (for failures) the cause label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtrcObservation {
    pub trunc_time: f64,
    pub obs_time: f64,
    pub event: bool,
    pub cause: Option<Cause>,
}

impl LtrcObservation {
    pub fn failure(trunc_time: f64, obs_time: f64, cause: Cause) -> Self {
        LtrcObservation { trunc_time, obs_time, event: true, cause: Some(cause) }
    }

    pub fn censored(trunc_time: f64, obs_time: f64) -> Self {
        LtrcObservation { trunc_time, obs_time, event: false, cause: None }
    }

    fn check(&self, row: usize) -> Result<()> {
        let violation = |reason: String| Error::InvariantViolation { row, reason };
        if !self.obs_time.is_finite() || self.obs_time <= 0.0 {
            return Err(violation(format!("observed time {} must be finite and positive", self.obs_time)));
        }
        if !self.trunc_time.is_finite() || self.trunc_time < 0.0 {
            return Err(violation(format!("truncation time {} must be finite and nonnegative", self.trunc_time)));
        }
        if self.obs_time <= self.trunc_time {
            return Err(violation(format!(
                "observed time {} does not exceed truncation time {}",
                self.obs_time, self.trunc_time
            )));
        }
        if self.cause.is_some() && !self.event {
            return Err(violation("censored row carries a cause label".to_string()));
        }
        Ok(())
    }
}

impl From<LtrcObservation> for RawRecord {
    fn from(obs: LtrcObservation) -> Self {
        RawRecord {
            trunc_time: obs.trunc_time,
            obs_time: obs.obs_time,
            event: obs.event,
            cause: obs.cause.map(Cause::label),
        }
    }
}

/// A validated, immutable sample with a cached ordering by observed time.
#[derive(Debug, Clone, PartialEq)]
pub struct LtrcSample {
    observations: Vec<LtrcObservation>,
    sorted_index: Vec<usize>,
    // Ascending copies used by the counting-process queries.
    sorted_obs: Vec<f64>,
    sorted_trunc: Vec<f64>,
}

/// Validates raw rows and builds the sample.
pub fn validate_sample<I>(rows: I) -> Result<LtrcSample>
where
    I: IntoIterator<Item = RawRecord>,
{
    let observations = rows
        .into_iter()
        .enumerate()
        .map(|(row, raw)| {
            let cause = match raw.cause {
                None => None,
                Some(label) => Some(Cause::from_label(label).ok_or_else(|| {
                    Error::InvariantViolation { row, reason: format!("cause label {label} is not 1 or 2") }
                })?),
            };
            Ok(LtrcObservation {
                trunc_time: raw.trunc_time,
                obs_time: raw.obs_time,
                event: raw.event,
                cause,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LtrcSample::new(observations)
}

impl LtrcSample {
    pub fn new(observations: Vec<LtrcObservation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptySample);
        }
        for (row, obs) in observations.iter().enumerate() {
            obs.check(row)?;
        }
        let mut sorted_index: Vec<usize> = (0..observations.len()).collect();
        // Stable, so ties keep their row order.
        sorted_index.sort_by(|&a, &b| observations[a].obs_time.total_cmp(&observations[b].obs_time));
        let sorted_obs = sorted_index.iter().map(|&i| observations[i].obs_time).collect();
        let mut sorted_trunc: Vec<f64> = observations.iter().map(|o| o.trunc_time).collect();
        sorted_trunc.sort_by(f64::total_cmp);
        Ok(LtrcSample { observations, sorted_index, sorted_obs, sorted_trunc })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[LtrcObservation] {
        &self.observations
    }

    pub fn get(&self, row: usize) -> &LtrcObservation {
        &self.observations[row]
    }

    /// Row indices ordered by ascending observed time.
    pub fn sorted_index(&self) -> &[usize] {
        &self.sorted_index
    }

    pub fn iter_sorted(&self) -> impl Iterator<Item = (usize, &LtrcObservation)> + '_ {
        self.sorted_index.iter().map(move |&i| (i, &self.observations[i]))
    }

    pub fn n_failures(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }

    pub fn n_censored(&self) -> usize {
        self.len() - self.n_failures()
    }

    pub fn max_obs_time(&self) -> f64 {
        *self.sorted_obs.last().expect("nonempty")
    }

    pub fn min_obs_time(&self) -> f64 {
        self.sorted_obs[0]
    }

    /// `Y(t)`: units with `L_i <= t <= T_i`.
    pub fn risk_set_size(&self, t: f64) -> usize {
        // Every row with T_i < t also has L_i < t, so Y(t) is entries minus exits.
        let entered = self.sorted_trunc.partition_point(|&l| l <= t);
        let exited = self.sorted_obs.partition_point(|&x| x < t);
        entered - exited
    }

    /// `N(t)`: failures observed at or before `t`.
    pub fn failure_count(&self, t: f64) -> usize {
        self.count_through(t, true)
    }

    /// `N^c(t)`: censorings observed at or before `t`.
    pub fn censor_count(&self, t: f64) -> usize {
        self.count_through(t, false)
    }

    fn count_through(&self, t: f64, event: bool) -> usize {
        self.iter_sorted()
            .take_while(|(_, o)| o.obs_time <= t)
            .filter(|(_, o)| o.event == event)
            .count()
    }

    /// Same sample with causes 1 and 2 swapped on every failure row.
    pub fn with_swapped_causes(&self) -> LtrcSample {
        let observations = self
            .observations
            .iter()
            .map(|o| LtrcObservation { cause: o.cause.map(Cause::other), ..*o })
            .collect();
        LtrcSample::new(observations).expect("relabeling preserves validity")
    }

    /// Applies `f` to every entry and observed time. `f` must be strictly
    /// increasing on `[0, inf)` and keep times nonnegative.
    pub fn map_times<F: Fn(f64) -> f64>(&self, f: F) -> Result<LtrcSample> {
        let observations = self
            .observations
            .iter()
            .map(|o| LtrcObservation { trunc_time: f(o.trunc_time), obs_time: f(o.obs_time), ..*o })
            .collect();
        LtrcSample::new(observations)
    }
}
