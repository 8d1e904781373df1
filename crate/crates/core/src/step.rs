use serde::Serialize;

/// Right-continuous piecewise-constant function.
///
/// `values[i]` holds on `[jump_times[i], jump_times[i + 1])` and
/// `initial_value` on `(-inf, jump_times[0])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFunction {
    jump_times: Vec<f64>,
    values: Vec<f64>,
    initial_value: f64,
}

impl StepFunction {
    /// Panics if the lengths differ or the jump times are not strictly increasing.
    pub fn new(jump_times: Vec<f64>, values: Vec<f64>, initial_value: f64) -> Self {
        assert_eq!(jump_times.len(), values.len(), "one value per jump time");
        assert!(
            jump_times.windows(2).all(|w| w[0] < w[1]),
            "jump times must be strictly increasing"
        );
        StepFunction { jump_times, values, initial_value }
    }

    pub fn constant(value: f64) -> Self {
        StepFunction { jump_times: Vec::new(), values: Vec::new(), initial_value: value }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&s| s <= t) {
            0 => self.initial_value,
            k => self.values[k - 1],
        }
    }

    /// `f(t-)`: the value just before `t`, ignoring a jump exactly at `t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&s| s < t) {
            0 => self.initial_value,
            k => self.values[k - 1],
        }
    }

    /// Value after the last jump.
    pub fn terminal_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial_value)
    }

    /// `(time, value)` pairs at the jumps.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jump_times.iter().copied().zip(self.values.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_continuous_evaluation() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.25], 1.0);
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.eval(1.5), 0.5);
        assert_eq!(f.eval(2.0), 0.25);
        assert_eq!(f.eval(99.0), 0.25);
        assert_eq!(f.left_limit(1.0), 1.0);
        assert_eq!(f.left_limit(2.0), 0.5);
        assert_eq!(f.left_limit(2.1), 0.25);
        assert_eq!(f.terminal_value(), 0.25);
    }

    #[test]
    fn constant_function() {
        let f = StepFunction::constant(1.0);
        assert_eq!(f.eval(-1.0), 1.0);
        assert_eq!(f.left_limit(3.0), 1.0);
        assert_eq!(f.points().count(), 0);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn rejects_unsorted_jumps() {
        StepFunction::new(vec![2.0, 1.0], vec![0.0, 0.0], 0.0);
    }
}
