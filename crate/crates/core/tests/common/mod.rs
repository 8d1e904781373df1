#![allow(dead_code)]

use ltrc_ustat::{Cause, LtrcObservation, LtrcSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

/// Random LTRC sample without tied times: entry uniform on `[0, 1)`, then an
/// exponential stay, failing with probability 0.7 and cause 1 with
/// probability 0.5.
pub fn random_sample(rng: &mut ChaCha8Rng, n: usize) -> LtrcSample {
    let rows = (0..n)
        .map(|_| {
            let l: f64 = rng.random::<f64>();
            let stay: f64 = Exp1.sample(rng);
            let t = l + stay + 1e-9;
            if rng.random::<f64>() < 0.7 {
                let cause = if rng.random::<bool>() { Cause::One } else { Cause::Two };
                LtrcObservation::failure(l, t, cause)
            } else {
                LtrcObservation::censored(l, t)
            }
        })
        .collect();
    LtrcSample::new(rows).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Composite trapezoid rule on `[a, b]` with `steps` panels.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    let inner: f64 = (1..steps).map(|k| f(a + k as f64 * h)).sum();
    h * (0.5 * f(a) + inner + 0.5 * f(b))
}
