//! IPCW U-statistics for left-truncated right-censored (LTRC) data.
//!
//! - [`sample`]: observations, validation, risk sets and counting processes.
//! - [`estimators`]: censoring product-limit / Nelson–Aalen estimators, IPCW
//!   weights, sub-distribution and cumulative incidence estimates.
//! - [`ustat`]: weighted U-statistics of any degree and their variance.
//! - [`crtest`]: the competing-risks independence test.
//! - [`sim`]: data generator and Monte Carlo harness for size and power.
//! - [`io`]: CSV and config formats used by the command-line tool.

pub mod crtest;
pub mod error;
pub mod estimators;
pub mod io;
pub mod sample;
pub mod sim;
pub mod step;
pub mod ustat;

pub use error::{Error, Result};
pub use sample::{validate_sample, Cause, LtrcObservation, LtrcSample, RawRecord};
pub use step::StepFunction;
