use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::CertifyError;
use crate::devices::{Interval, Observation};

/// A confidence interval at level `ε`: contains the true parameter with probability
/// at least `1 − ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub parameter: String,
    pub low: f64,
    pub high: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn interval(&self) -> Interval {
        Interval::new(self.low, self.high)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Two,
    /// `[0, u]`.
    Upper,
    /// `[l, 1]`.
    Lower,
}

fn check_level(level: f64) -> Result<(), CertifyError> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(CertifyError::InvalidInput(format!("level {level} outside (0, 1]")));
    }
    Ok(())
}

/// Smallest `p` with `g(p) ≥ target` for nondecreasing `g` on `[0, 1]`; the returned
/// point always satisfies the inequality.
fn bisect_up(target: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Largest `p` with `g(p) ≤ target` for nondecreasing `g` on `[0, 1]`.
fn bisect_down(target: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Upper end `u` with `Pr[Bin(n, u) ≤ k] = tail`, rounded up.
fn cp_upper(k: u64, n: u64, tail: f64) -> f64 {
    if k == n {
        return 1.0;
    }
    if k == 0 {
        return 1.0 - tail.powf(1.0 / n as f64);
    }
    // Pr[Bin(n, p) ≤ k] = 1 − I_p(k+1, n−k), increasing in p after negation.
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    bisect_up(1.0 - tail, |p| beta_reg(a, b, p))
}

/// Lower end `l` with `Pr[Bin(n, l) ≥ k] = tail`, rounded down.
fn cp_lower(k: u64, n: u64, tail: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k == n {
        return tail.powf(1.0 / n as f64);
    }
    // Pr[Bin(n, p) ≥ k] = I_p(k, n−k+1).
    let (a, b) = (k as f64, (n - k + 1) as f64);
    bisect_down(tail, |p| beta_reg(a, b, p))
}

/// Exact binomial (tail inversion) interval for `k` successes in `n` trials.
/// Two-sided intervals spend `ε/2` on each tail.
pub fn clopper_pearson(k: u64, n: u64, level: f64, side: Side) -> Result<ConfidenceInterval, CertifyError> {
    if n == 0 || k > n {
        return Err(CertifyError::InvalidInput(format!("{k} successes in {n} trials")));
    }
    check_level(level)?;
    let (low, high) = match side {
        Side::Two => (cp_lower(k, n, level / 2.0), cp_upper(k, n, level / 2.0)),
        Side::Upper => (0.0, cp_upper(k, n, level)),
        Side::Lower => (cp_lower(k, n, level), 1.0),
    };
    Ok(ConfidenceInterval {
        parameter: String::new(),
        low,
        high,
        level,
    })
}

/// Half-width `(b − a)·sqrt(ln(2/ε) / (2n))` of the two-sided Hoeffding interval.
pub fn hoeffding_delta(n: u64, level: f64, range: (f64, f64)) -> f64 {
    (range.1 - range.0) * ((2.0 / level).ln() / (2.0 * n as f64)).sqrt()
}

/// `[m − δ, m + δ]` clipped to `[a, b]`.
pub fn hoeffding_interval(mean: f64, n: u64, level: f64, range: (f64, f64)) -> Result<ConfidenceInterval, CertifyError> {
    if n == 0 {
        return Err(CertifyError::InvalidInput("no trials".into()));
    }
    if !(range.0 < range.1) {
        return Err(CertifyError::InvalidInput(format!("range [{}, {}]", range.0, range.1)));
    }
    check_level(level)?;
    let delta = hoeffding_delta(n, level, range);
    Ok(ConfidenceInterval {
        parameter: String::new(),
        low: (mean - delta).max(range.0),
        high: (mean + delta).min(range.1),
        level,
    })
}

/// Interval constructions available to certification plans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    ClopperPearson { side: Side },
    Hoeffding,
    /// A data-independent interval (degenerate characterization).
    Fixed { low: f64, high: f64 },
}

impl Estimator {
    pub fn interval(&self, parameter: &str, obs: &Observation, level: f64) -> Result<ConfidenceInterval, CertifyError> {
        let mut ci = match (*self, *obs) {
            (Estimator::ClopperPearson { side }, Observation::Count { successes, trials }) => {
                clopper_pearson(successes, trials, level, side)?
            }
            (Estimator::ClopperPearson { .. }, Observation::Mean { .. }) => {
                return Err(CertifyError::InvalidInput(format!(
                    "Clopper-Pearson needs counts for {parameter}"
                )))
            }
            (Estimator::Hoeffding, Observation::Count { successes, trials }) => {
                hoeffding_interval(successes as f64 / trials.max(1) as f64, trials, level, (0.0, 1.0))?
            }
            (Estimator::Hoeffding, Observation::Mean { mean, trials, low, high }) => {
                hoeffding_interval(mean, trials, level, (low, high))?
            }
            (Estimator::Fixed { low, high }, _) => ConfidenceInterval {
                parameter: String::new(),
                low,
                high,
                level,
            },
        };
        ci.parameter = parameter.to_string();
        Ok(ci)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_successes_closed_form() {
        let ci = clopper_pearson(0, 100, 0.05, Side::Upper).unwrap();
        assert_eq!(ci.low, 0.0);
        assert!((ci.high - (1.0 - 0.05f64.powf(0.01))).abs() < 1e-15);
        assert!((ci.high - 0.029513).abs() < 1e-6);
    }

    #[test]
    fn bisection_meets_its_tail() {
        let ci = clopper_pearson(7, 40, 0.05, Side::Two).unwrap();
        // Pr[Bin(40, u) ≤ 7] ≤ 0.025 at the returned upper end, just above it below.
        let upper = |p: f64| beta_reg(8.0, 33.0, p);
        assert!(upper(ci.high) >= 0.975);
        assert!(upper(ci.high - 1e-9) < 0.975);
        let sf = |p: f64| beta_reg(7.0, 34.0, p);
        assert!(sf(ci.low) <= 0.025);
        assert!(sf(ci.low + 1e-9) > 0.025);
    }

    #[test]
    fn hoeffding_width() {
        let ci = hoeffding_interval(0.5, 1000, 1e-6, (0.0, 1.0)).unwrap();
        let delta = ((2e6f64).ln() / 2000.0).sqrt();
        assert!((ci.high - 0.5 - delta).abs() < 1e-15);
        assert!((delta - 0.085172).abs() < 1e-6);
        assert!(hoeffding_interval(0.5, 10, 0.1, (1.0, 1.0)).is_err());
    }
}
