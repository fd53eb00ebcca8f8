//! Small floating-point helpers shared by the log-domain code paths.

use std::f64::consts::TAU;

/// Largest |log| that is materialized to linear scale.
pub const MATERIALIZE_LIMIT: f64 = 500.0;

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// `log(sum(exp(x_i)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: NeumaierSum = terms.iter().map(|t| (t - max).exp()).collect();
    max + s.value().ln()
}

/// Reduce into `[0, 1)`, guarding against `rem_euclid` rounding up to 1.
pub fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Reduce an angle into `[0, 2π)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Shortest signed distance between two angles.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = wrap_phase(a - b);
    d.min(TAU - d)
}

/// Exponentiate only when the result is comfortably inside double range.
pub fn materialize(log_value: f64) -> Option<f64> {
    if log_value == f64::NEG_INFINITY {
        Some(0.0)
    } else if log_value.abs() <= MATERIALIZE_LIMIT {
        Some(log_value.exp())
    } else {
        None
    }
}

/// CSV form of a real: 17 significant digits, `.` decimal point.
pub fn fmt_real(x: f64) -> String {
    // −0 prints as 0 so signs of zeros never show up in reports
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}
