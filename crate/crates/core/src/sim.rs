//! Competing-risks LTRC data generator and the Monte Carlo harness used to
//! measure empirical size and power of the independence test.
//!
//! Lifetimes follow `F` (standard exponential or unit-scale Weibull), causes
//! follow the sub-distribution family `F_1 = P_1 F^a`, `F_2 = F - F_1`, so
//! `P(J = 1 | X = x) = P_1 a F(x)^(a-1)`. Censoring `C ~ Exp(rate gamma)` is
//! calibrated to `P(X > C) = p` and truncation `L ~ Exp(mean theta)` to
//! `P(L > X) = q`. Units with `min(X, C) <= L` are discarded and redrawn
//! until `n` observed units are collected.

use std::fmt;

use quadrature::double_exponential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crtest::{rejects, test_statistic, Scaling, TestOptions};
use crate::error::{Error, Result};
use crate::estimators::LimitConvention;
use crate::sample::{Cause, LtrcObservation, LtrcSample};

/// Draws allowed per observed unit before giving up.
pub const MAX_ATTEMPTS_PER_UNIT: u64 = 1_000_000;

const BRACKET: (f64, f64) = (1e-8, 1e8);
const CALIBRATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Lifetime {
    /// Standard exponential.
    Exponential,
    /// `F(x) = 1 - exp(-x^shape)`.
    Weibull { shape: f64 },
}

impl Lifetime {
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Lifetime::Exponential => -(-x).exp_m1(),
            Lifetime::Weibull { shape } => -(-x.powf(shape)).exp_m1(),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let h = -(-u).ln_1p();
        match *self {
            Lifetime::Exponential => h,
            Lifetime::Weibull { shape } => h.powf(1.0 / shape),
        }
    }

    /// `E[exp(-s X)]`.
    pub fn laplace(&self, s: f64) -> f64 {
        match *self {
            Lifetime::Exponential => 1.0 / (1.0 + s),
            Lifetime::Weibull { .. } => {
                // Integrate over the probability scale; the integrand is bounded by 1.
                double_exponential::integrate(|u| (-s * self.quantile(u)).exp(), 0.0, 1.0, 1e-12).integral
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Lifetime::Exponential => Exp1.sample(rng),
            Lifetime::Weibull { shape } => Weibull::new(1.0, shape).expect("validated shape").sample(rng),
        }
    }
}

impl fmt::Display for Lifetime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lifetime::Exponential => f.write_str("exp"),
            Lifetime::Weibull { shape } => write!(f, "weibull({shape})"),
        }
    }
}

/// Increasing root of `f` on `BRACKET`, bisecting on the log scale.
fn bisect_log<F: Fn(f64) -> f64>(f: F, what: &'static str) -> Result<f64> {
    let (mut lo, mut hi) = (BRACKET.0.ln(), BRACKET.1.ln());
    let (f_lo, f_hi) = (f(lo.exp()), f(hi.exp()));
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::NoRoot { what });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let value = f(mid.exp());
        if value.abs() < CALIBRATION_TOL * 1e-2 || hi - lo < 1e-14 {
            return Ok(mid.exp());
        }
        if value < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Rate `gamma` of exponential censoring with `P(X > C) = p`.
pub fn calibrate_censoring(lifetime: Lifetime, p: f64) -> Result<f64> {
    check_fraction("censor_frac", p)?;
    match lifetime {
        Lifetime::Exponential => Ok(p / (1.0 - p)),
        // P(C < X) = 1 - E[exp(-gamma X)], increasing in gamma.
        _ => bisect_log(|gamma| 1.0 - lifetime.laplace(gamma) - p, "censoring rate"),
    }
}

/// Mean `theta` of exponential truncation with `P(L > X) = q`.
pub fn calibrate_truncation(lifetime: Lifetime, q: f64) -> Result<f64> {
    check_fraction("trunc_frac", q)?;
    match lifetime {
        Lifetime::Exponential => Ok(q / (1.0 - q)),
        // P(L > X) = E[exp(-X / theta)], increasing in theta.
        _ => bisect_log(|theta| lifetime.laplace(1.0 / theta) - q, "truncation mean"),
    }
}

fn check_fraction(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig { field: field.into(), reason: format!("{value} is not in (0, 1)") })
    }
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lifetime: Lifetime,
    pub a: f64,
    pub p1: f64,
    pub censor_frac: f64,
    pub trunc_frac: f64,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub options: TestOptions,
}

impl SimConfig {
    /// Exponential lifetimes, 20% censoring, 20% truncation, 5% level.
    pub fn exponential(a: f64, p1: f64, n: usize, reps: usize) -> Self {
        SimConfig {
            lifetime: Lifetime::Exponential,
            a,
            p1,
            censor_frac: 0.2,
            trunc_frac: 0.2,
            n,
            reps,
            alpha: 0.05,
            seed: 1,
            options: TestOptions { convention: LimitConvention::Left, scaling: Scaling::AsPrinted },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, reason: String| Err(Error::InvalidConfig { field: field.into(), reason });
        if let Lifetime::Weibull { shape } = self.lifetime {
            if !(shape > 0.0 && shape.is_finite()) {
                return invalid("shape", format!("{shape} must be positive"));
            }
        }
        if !(1.0..=2.0).contains(&self.a) {
            return invalid("a", format!("{} is not in [1, 2]", self.a));
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return invalid("p1", format!("{} is not in (0, 1)", self.p1));
        }
        if self.p1 * self.a > 1.0 {
            return invalid("p1", format!("p1 * a = {} exceeds 1", self.p1 * self.a));
        }
        check_fraction("censor_frac", self.censor_frac)?;
        check_fraction("trunc_frac", self.trunc_frac)?;
        if self.n < 5 {
            return invalid("n", format!("{} is below the minimum of 5", self.n));
        }
        if self.reps == 0 {
            return invalid("reps", "must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid("alpha", format!("{} is not in (0, 1)", self.alpha));
        }
        Ok(())
    }
}

/// Calibrated censoring rate and truncation mean for a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub censor_rate: f64,
    pub trunc_mean: f64,
}

impl Calibration {
    pub fn for_config(config: &SimConfig) -> Result<Self> {
        Ok(Calibration {
            censor_rate: calibrate_censoring(config.lifetime, config.censor_frac)?,
            trunc_mean: calibrate_truncation(config.lifetime, config.trunc_frac)?,
        })
    }
}

/// `P(J = 1 | X = x) = P_1 a F(x)^(a - 1)`.
pub fn cause_probability(lifetime: Lifetime, a: f64, p1: f64, x: f64) -> Result<f64> {
    let value = p1 * a * lifetime.cdf(x).powf(a - 1.0);
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::InvalidProbability { value })
    }
}

pub fn assign_cause<R: Rng + ?Sized>(x: f64, config: &SimConfig, rng: &mut R) -> Result<Cause> {
    let p = cause_probability(config.lifetime, config.a, config.p1, x)?;
    Ok(if rng.random::<f64>() < p { Cause::One } else { Cause::Two })
}

/// Draws `config.n` observed units.
pub fn draw_ltrc_sample<R: Rng + ?Sized>(
    config: &SimConfig,
    calibration: &Calibration,
    rng: &mut R,
) -> Result<LtrcSample> {
    let censoring = Exp::new(calibration.censor_rate).expect("positive rate");
    let truncation = Exp::new(1.0 / calibration.trunc_mean).expect("positive rate");
    let mut rows = Vec::with_capacity(config.n);
    while rows.len() < config.n {
        let mut attempts = 0u64;
        let row = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS_PER_UNIT {
                return Err(Error::GenerationStalled { attempts: MAX_ATTEMPTS_PER_UNIT });
            }
            let x = config.lifetime.sample(rng);
            let c: f64 = censoring.sample(rng);
            let l: f64 = truncation.sample(rng);
            let cause = assign_cause(x, config, rng)?;
            let t = x.min(c);
            if t > l {
                break if x < c {
                    LtrcObservation::failure(l, t, cause)
                } else {
                    LtrcObservation::censored(l, t)
                };
            }
        };
        rows.push(row);
    }
    LtrcSample::new(rows)
}

/// Generator for replication `rep`: the root seed selects the key, the
/// replication index the stream, so draws do not depend on scheduling.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Rejection frequency with its binomial Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalRate {
    pub rejection_rate: f64,
    pub reps: usize,
    pub mc_standard_error: f64,
}

impl EmpiricalRate {
    pub fn new(rejections: usize, reps: usize) -> Self {
        let r = if reps == 0 { 0.0 } else { rejections as f64 / reps as f64 };
        let se = if reps == 0 { 0.0 } else { (r * (1.0 - r) / reps as f64).sqrt() };
        EmpiricalRate { rejection_rate: r, reps, mc_standard_error: se }
    }
}

/// Per-replication outcomes of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    /// Standardized statistic per replication, `None` when it was skipped.
    pub z: Vec<Option<f64>>,
    pub delta_hat: Vec<Option<f64>>,
    /// First error message per distinct failure kind, with counts.
    pub skipped: Vec<(String, usize)>,
    /// Censored fraction among all observed rows.
    pub realized_censored_fraction: f64,
}

impl MonteCarloRun {
    pub fn completed(&self) -> usize {
        self.z.iter().flatten().count()
    }

    pub fn rate(&self, alpha: f64) -> EmpiricalRate {
        let rejections = self.z.iter().flatten().filter(|&&z| rejects(z, alpha)).count();
        EmpiricalRate::new(rejections, self.completed())
    }
}

/// Runs every replication of `config`; identical for any rayon pool size.
pub fn run_replications(config: &SimConfig) -> Result<MonteCarloRun> {
    config.validate()?;
    let calibration = Calibration::for_config(config)?;
    let outcomes: Vec<(Result<(f64, f64)>, usize)> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(config.seed, rep);
            match draw_ltrc_sample(config, &calibration, &mut rng) {
                Ok(sample) => {
                    let censored = sample.n_censored();
                    let stat = test_statistic(&sample, config.options).map(|s| (s.z, s.delta_hat));
                    (stat, censored)
                }
                Err(err) => (Err(err), 0),
            }
        })
        .collect();

    let mut run = MonteCarloRun {
        z: Vec::with_capacity(outcomes.len()),
        delta_hat: Vec::with_capacity(outcomes.len()),
        skipped: Vec::new(),
        realized_censored_fraction: 0.0,
    };
    let mut censored_total = 0usize;
    for (outcome, censored) in outcomes {
        censored_total += censored;
        match outcome {
            Ok((z, delta)) => {
                run.z.push(Some(z));
                run.delta_hat.push(Some(delta));
            }
            Err(err) => {
                if let Error::GenerationStalled { .. } = err {
                    return Err(err);
                }
                run.z.push(None);
                run.delta_hat.push(None);
                let kind = err.to_string();
                let kind = kind.split(" (").next().unwrap_or(&kind).to_string();
                match run.skipped.iter_mut().find(|(k, _)| *k == kind) {
                    Some((_, count)) => *count += 1,
                    None => run.skipped.push((kind, 1)),
                }
            }
        }
    }
    run.realized_censored_fraction = censored_total as f64 / (config.reps * config.n) as f64;
    Ok(run)
}

/// Rejection rate of the test at `config.alpha`.
pub fn monte_carlo(config: &SimConfig) -> Result<EmpiricalRate> {
    Ok(run_replications(config)?.rate(config.alpha))
}

/// One line of a size/power table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub a: f64,
    pub p1: f64,
    pub n: usize,
    pub censor_frac: f64,
    pub alpha: f64,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub seed: u64,
}

/// A grid of scenarios sharing lifetime, truncation, replication count and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub lifetime: Lifetime,
    /// `(a, P_1)` pairs.
    pub params: Vec<(f64, f64)>,
    pub n: Vec<usize>,
    pub censor_frac: Vec<f64>,
    pub alpha: Vec<f64>,
    pub trunc_frac: f64,
    pub reps: usize,
    pub seed: u64,
    pub options: TestOptions,
}

impl TableSpec {
    /// Scenarios in table order: parameters, then n, then censoring. Each is
    /// evaluated at every level, reusing the same replications.
    pub fn scenarios(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for &(a, p1) in &self.params {
            for &n in &self.n {
                for &censor_frac in &self.censor_frac {
                    out.push(SimConfig {
                        lifetime: self.lifetime,
                        a,
                        p1,
                        censor_frac,
                        trunc_frac: self.trunc_frac,
                        n,
                        reps: self.reps,
                        alpha: self.alpha[0],
                        seed: self.seed,
                        options: self.options,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |field: &str| Err(Error::InvalidConfig { field: field.into(), reason: "must not be empty".into() });
        if self.params.is_empty() {
            return empty("a");
        }
        if self.n.is_empty() {
            return empty("n");
        }
        if self.censor_frac.is_empty() {
            return empty("censor_frac");
        }
        if self.alpha.is_empty() {
            return empty("alpha");
        }
        for config in self.scenarios() {
            for &alpha in &self.alpha {
                SimConfig { alpha, ..config.clone() }.validate()?;
            }
        }
        Ok(())
    }

    pub fn run(&self) -> Result<Vec<TableRow>> {
        self.validate()?;
        let mut rows = Vec::new();
        for config in self.scenarios() {
            let run = run_replications(&config)?;
            for &alpha in &self.alpha {
                let rate = run.rate(alpha);
                rows.push(TableRow {
                    a: config.a,
                    p1: config.p1,
                    n: config.n,
                    censor_frac: config.censor_frac,
                    alpha,
                    rejection_rate: rate.rejection_rate,
                    mc_se: rate.mc_standard_error,
                    reps: rate.reps,
                    seed: config.seed,
                });
            }
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_calibration_closed_forms() {
        assert!((calibrate_censoring(Lifetime::Exponential, 0.2).unwrap() - 0.25).abs() < 1e-15);
        assert!((calibrate_censoring(Lifetime::Exponential, 0.4).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((calibrate_truncation(Lifetime::Exponential, 0.2).unwrap() - 0.25).abs() < 1e-15);
        assert!((calibrate_truncation(Lifetime::Exponential, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(calibrate_censoring(Lifetime::Exponential, 1.0).is_err());
    }

    #[test]
    fn bisection_agrees_with_closed_form() {
        // Weibull with shape 1 is the standard exponential.
        let w = Lifetime::Weibull { shape: 1.0 };
        assert!((calibrate_censoring(w, 0.2).unwrap() - 0.25).abs() < 1e-7);
        assert!((calibrate_truncation(w, 0.2).unwrap() - 0.25).abs() < 1e-7);
    }

    #[test]
    fn weibull_calibration_hits_target() {
        let w = Lifetime::Weibull { shape: 2.0 };
        for p in [0.01, 0.2, 0.4] {
            let gamma = calibrate_censoring(w, p).unwrap();
            assert!((1.0 - w.laplace(gamma) - p).abs() < 1e-8);
            let theta = calibrate_truncation(w, p).unwrap();
            assert!((w.laplace(1.0 / theta) - p).abs() < 1e-8);
        }
        assert!(calibrate_censoring(w, 0.01).unwrap() < calibrate_censoring(w, 0.2).unwrap());
        assert!(calibrate_truncation(w, 0.1).unwrap() < calibrate_truncation(w, 0.3).unwrap());
    }

    #[test]
    fn weibull_laplace_by_midpoint_rule() {
        // Independent check: midpoint rule in x on a fine grid.
        let w = Lifetime::Weibull { shape: 2.0 };
        let s = 0.7;
        let h = 1e-4;
        let integral: f64 = (0..200_000)
            .map(|k| {
                let x = (k as f64 + 0.5) * h;
                (-s * x).exp() * 2.0 * x * (-x * x).exp() * h
            })
            .sum();
        assert!((w.laplace(s) - integral).abs() < 1e-8);
    }

    #[test]
    fn cause_probability_examples() {
        let e = Lifetime::Exponential;
        for x in [0.1, 1.0, 5.0] {
            assert!((cause_probability(e, 1.0, 0.45, x).unwrap() - 0.45).abs() < 1e-15);
        }
        // F(x) = 0.5 at x = ln 2.
        let p = cause_probability(e, 2.0, 0.3, std::f64::consts::LN_2).unwrap();
        assert!((p - 0.3).abs() < 1e-12);
        assert!(matches!(cause_probability(e, 2.0, 0.9, 50.0).unwrap_err(), Error::InvalidProbability { .. }));
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::exponential(1.5, 0.3, 100, 10);
        assert!(ok.validate().is_ok());
        for bad in [
            SimConfig { a: 2.5, ..ok.clone() },
            SimConfig { p1: 0.0, ..ok.clone() },
            SimConfig { p1: 0.6, a: 2.0, ..ok.clone() },
            SimConfig { n: 4, ..ok.clone() },
            SimConfig { censor_frac: 1.0, ..ok.clone() },
            SimConfig { alpha: 0.0, ..ok.clone() },
            SimConfig { reps: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate().unwrap_err(), Error::InvalidConfig { .. }), "{bad:?}");
        }
    }

    #[test]
    fn drawn_rows_are_observed() {
        let config = SimConfig::exponential(1.5, 0.3, 500, 1);
        let calibration = Calibration::for_config(&config).unwrap();
        let sample = draw_ltrc_sample(&config, &calibration, &mut replication_rng(7, 0)).unwrap();
        assert_eq!(sample.len(), 500);
        assert!(sample.observations().iter().all(|o| o.obs_time > o.trunc_time));
        assert!(sample.observations().iter().all(|o| o.event == o.cause.is_some()));
    }

    #[test]
    fn near_zero_censoring_and_truncation() {
        let config = SimConfig { censor_frac: 1e-6, trunc_frac: 1e-6, ..SimConfig::exponential(1.0, 0.5, 2000, 1) };
        let calibration = Calibration::for_config(&config).unwrap();
        let sample = draw_ltrc_sample(&config, &calibration, &mut replication_rng(3, 0)).unwrap();
        assert!((sample.n_censored() as f64) < 0.01 * 2000.0);
    }

    #[test]
    fn rate_standard_error() {
        let r = EmpiricalRate::new(25, 100);
        assert_eq!(r.rejection_rate, 0.25);
        assert!((r.mc_standard_error - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn table_layout() {
        let spec = TableSpec {
            lifetime: Lifetime::Exponential,
            params: vec![(1.0, 0.45), (1.0, 0.48)],
            n: vec![50, 75, 100, 150, 200],
            censor_frac: vec![0.2, 0.4],
            alpha: vec![0.05, 0.01],
            trunc_frac: 0.2,
            reps: 1,
            seed: 1,
            options: TestOptions::default(),
        };
        assert_eq!(spec.scenarios().len(), 20);
        let rows = spec.run().unwrap();
        assert_eq!(rows.len(), 40);
        assert!(rows.iter().all(|r| r.rejection_rate == 0.0 || r.rejection_rate == 1.0));
    }
}
